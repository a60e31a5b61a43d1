#include <math.h>
#include <stdio.h>
#include <string.h>

#include "mimo_dpd.h"

static int failures = 0;

static void check(int ok, const char *what) {
    if (!ok) {
        fprintf(stderr, "FAIL: %s (%s)\n", what, md_last_error_message());
        failures++;
    }
}

int main(void) {
    uint64_t f = 0;
    check(md_flops(11, 5, 100, &f) == MD_STATUS_OK && f == 23000, "flops");

    double a = 0.0;
    check(md_saleh_amam(1.0 / sqrt(2.2), 2.0, 2.2, &a) == MD_STATUS_OK, "amam");
    check(fabs(a - 1.0 / sqrt(2.2)) < 1e-12, "amam peak");

    MdComplex c[6] = {{1, 0}, {0, 0}, {0.1, 0.05}, {0, 0}, {0, 0}, {0, 0}};
    MdMemoryPolynomial *mp = NULL;
    check(md_mp_new(3, 1, c, 6, &mp) == MD_STATUS_OK, "mp_new");
    check(md_mp_num_coeffs(mp) == 6, "num_coeffs");
    MdComplex x[4] = {{0.5, 0}, {0, 0.5}, {-0.5, 0}, {0, -0.5}};
    MdComplex y[4];
    check(md_mp_apply(mp, x, y, 4) == MD_STATUS_OK, "mp_apply");
    check(fabs(y[0].re - 0.525) < 1e-12 && fabs(y[0].im - 0.0125) < 1e-12, "mp value");
    md_mp_free(mp);
    md_mp_free(NULL);

    check(md_mp_new(3, 1, c, 5, &mp) == MD_STATUS_INVALID_ARGUMENT, "length mismatch rejected");
    check(strlen(md_last_error_message()) > 0, "error message set");

    if (failures == 0) {
        printf("ok\n");
    }
    return failures == 0 ? 0 : 1;
}
