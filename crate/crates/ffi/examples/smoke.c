/* Solves one fixture portfolio through the C API and prints it. */
#include <stdio.h>
#include "fxoverlay.h"

#define CHECK(call)                                                       \
    do {                                                                  \
        FxoError e_ = (call);                                             \
        if (e_ != FXO_ERROR_OK) {                                         \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)e_,       \
                    fxo_last_error());                                    \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int main(void) {
    FxoModel *model = NULL;
    FxoSpec *spec = NULL;
    FxoSolution *sol = NULL;
    double vol, var, ret, overlay[4];

    CHECK(fxo_model_load(NULL, NULL, NULL, &model));
    CHECK(fxo_spec_new(model, "{\"M\": 0.05}", &spec));
    CHECK(fxo_spec_set_mu(spec, 0.01));
    CHECK(fxo_solve(model, spec, &sol));
    if (fxo_solution_status(sol) != FXO_STATUS_OPTIMAL) {
        fprintf(stderr, "not optimal\n");
        return 2;
    }
    CHECK(fxo_solution_risk_return(sol, &vol, &var, &ret));
    CHECK(fxo_solution_overlay(sol, overlay, 4));
    printf("version %s\n", fxo_version());
    printf("volatility %.6f return %.6f\n", vol, ret);
    printf("overlay %.4f %.4f %.4f %.4f\n", overlay[0], overlay[1], overlay[2], overlay[3]);

    if (fxo_spec_set_cardinality(spec, 99) != FXO_ERROR_CONFIG) return 3;
    printf("rejected: %s\n", fxo_last_error());

    fxo_solution_free(sol);
    fxo_spec_free(spec);
    fxo_model_free(model);
    return 0;
}
