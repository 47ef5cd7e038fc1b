#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "cbnlab.h"

static int fail(const char *what) {
    char msg[256];
    cbnlab_last_error(msg, sizeof msg);
    fprintf(stderr, "%s: %s\n", what, msg);
    return 1;
}

int main(void) {
    uint64_t added = 0;
    if (cbnlab_params_added(8, &added) != CBNLAB_STATUS_OK || added != 28160) return fail("params");

    CbnlabGenerator *g = NULL;
    const char *spec = "{\"base_width\": 4, \"extent\": 8, \"res_blocks\": 1, \"latent_dim\": 2}";
    if (cbnlab_generator_new(spec, 7, &g) != CBNLAB_STATUS_OK) return fail("new");
    size_t extent = 0, latent = 0;
    cbnlab_generator_info(g, &extent, &latent, NULL);
    double x[3 * 8 * 8], codes[2] = {1.0, 0.0}, out[3 * 8 * 8];
    for (int i = 0; i < 3 * 8 * 8; i++) x[i] = sin(0.37 * i);
    if (cbnlab_generator_forward(g, x, codes, 1, out, 3 * 8 * 8) != CBNLAB_STATUS_OK) return fail("forward");
    for (int i = 0; i < 3 * 8 * 8; i++)
        if (!(fabs(out[i]) < 1.0)) return fail("range");
    if (cbnlab_generator_forward(g, x, codes, 1, out, 10) != CBNLAB_STATUS_BUFFER_TOO_SMALL) return 1;
    cbnlab_generator_free(g);

    char *json = NULL;
    size_t failed = 1;
    if (cbnlab_run_checks("params", &json, &failed) != CBNLAB_STATUS_OK || failed != 0) return fail("checks");
    cbnlab_string_free(json);
    printf("ok %zu %zu\n", extent, latent);
    return 0;
}
