#include <stdio.h>
#include <stdlib.h>
#include "tunnelkit.h"

static const char *CONFIG =
    "schema = 1\n"
    "[domain]\nkind = interval\nextents = -2, 2\nresolution = 401\n"
    "[potential]\nV = (1 - x^2)^2\n"
    "[hbar]\nsweep = 0.12, 0.1\n";

int main(void) {
    TkProblem *p = NULL;
    TkReport *r = NULL;
    size_t wells = 0, count = 0, need = 0;
    double hbar, direct, predicted;
    char msg[256];

    if (tk_problem_from_str(CONFIG, 7, &p) != TK_STATUS_OK) return 1;
    if (tk_problem_well_count(p, &wells) != TK_STATUS_OK || wells != 2) return 2;
    if (tk_run(p, TK_COMMAND_INTERACTION, &r) != TK_STATUS_OK) return 3;
    if (tk_report_hbar_count(r, &count) != TK_STATUS_OK || count != 2) return 4;
    if (tk_report_splitting(r, 0, &hbar, &direct, &predicted) != TK_STATUS_OK) return 5;
    if (tk_report_json(r, NULL, 0, &need) != TK_STATUS_BUFFER_TOO_SMALL || need < 100) return 6;
    char *json = malloc(need);
    if (tk_report_json(r, json, need, NULL) != TK_STATUS_OK) return 7;
    if (tk_report_splitting(r, 5, &hbar, &direct, &predicted) != TK_STATUS_OUT_OF_RANGE) return 8;
    if (tk_last_error(msg, sizeof msg, NULL) != TK_STATUS_OK) return 9;
    printf("%s %.6e %.6e %s\n", tk_version(), direct, predicted, msg);
    free(json);
    tk_report_free(r);
    tk_problem_free(p);
    return 0;
}
