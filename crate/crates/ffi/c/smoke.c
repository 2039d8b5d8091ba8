#include <math.h>
#include <stdio.h>
#include "isocg.h"

int main(void) {
    double a[4] = {4.0, 1.0, 1.0, 3.0};
    double b[2] = {1.0, 2.0};
    double x[2];
    IsocgSolveResult r;
    IsocgStatus st = isocg_cg_solve(2, a, b, NULL, x, &r);
    if (st != ISOCG_STATUS_OK || !r.converged) return 1;
    if (fabs(x[0] - 1.0 / 11.0) > 1e-10 || fabs(x[1] - 7.0 / 11.0) > 1e-10) return 2;

    IsocgSampleSet *set = isocg_sampleset_bundled();
    double g;
    if (isocg_roofline_gflops(set, "xeon", 0.25, &g) != ISOCG_STATUS_OK || fabs(g - 11.0) > 1e-12) return 3;
    st = isocg_roofline_gflops(set, "nope", 0.25, &g);
    char msg[128];
    isocg_last_error(msg, sizeof msg);
    isocg_sampleset_free(set);
    if (st != ISOCG_STATUS_UNKNOWN_MACHINE) return 4;

    printf("ok %s | %s\n", isocg_status_name(st), msg);
    return 0;
}
