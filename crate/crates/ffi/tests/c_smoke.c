#include <stdio.h>
#include <string.h>
#include <math.h>
#include "pifl.h"

static const char *CONFIG =
    "[run]\nrounds = 2\ntiers = 2\n"
    "[population]\nkind = \"mixture\"\nnum_clients = 6\ntrain_samples = 40\n"
    "test_samples = 20\npersonal_samples = 10\n";

int main(void) {
    PiflSimulation *sim = NULL;
    if (pifl_sim_new("[run]\nrounds = 0\n", &sim) != PIFL_STATUS_CONFIG_ERROR || sim != NULL) return 10;
    if (strstr(pifl_last_error(), "run.rounds") == NULL) return 11;

    if (pifl_sim_new(CONFIG, &sim) != PIFL_STATUS_OK) return 12;
    char *json = NULL;
    if (pifl_sim_summary_json(sim, &json) != PIFL_STATUS_INVALID_STATE) return 13;
    if (pifl_sim_run(sim) != PIFL_STATUS_OK) return 14;
    if (pifl_sim_summary_json(sim, &json) != PIFL_STATUS_OK) return 15;
    if (strstr(json, "\"completed_rounds\":2") == NULL) return 16;
    pifl_string_free(json);
    pifl_sim_free(sim);

    PiflEstimatorErrors e;
    if (pifl_theory_closed_form(10, 10, 5, 1.0, 1.0, 5.0, &e) != PIFL_STATUS_OK) return 17;
    if (fabs(e.tier - e.local) > 1e-12) return 18;

    PiflReimbursement r;
    if (pifl_reimbursement(0.55, 0.5, 0.5, 0.2, &r) != PIFL_STATUS_OK) return 19;
    printf("ok %s %.4f %.4f\n", pifl_version(), r.delta_util, r.theta);
    return 0;
}
