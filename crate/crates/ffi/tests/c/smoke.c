#include <math.h>
#include <stdio.h>
#include <string.h>

#include "smtk.h"

#define N 64

int main(int argc, char **argv) {
    const char *config = "classes = 3\nchannels = 8,16\nblocks = 1,1\ngrid = 0.3\n";
    SmtkModel *model = NULL;
    if (smtk_model_build(config, 7, &model) != SMTK_STATUS_OK) {
        fprintf(stderr, "build: %s\n", smtk_last_error());
        return 1;
    }
    size_t classes = 0;
    uint64_t params = 0;
    smtk_model_num_classes(model, &classes);
    smtk_model_param_count(model, &params);

    double pos[N * 3];
    for (int i = 0; i < N * 3; i++) {
        pos[i] = (double)((i * 37) % 101) / 101.0;
    }
    double logits[N * 3];
    if (smtk_model_forward(model, pos, NULL, N, logits, N * 3) != SMTK_STATUS_OK) {
        fprintf(stderr, "forward: %s\n", smtk_last_error());
        return 1;
    }
    if (smtk_model_forward(model, pos, NULL, N, logits, 5) != SMTK_STATUS_INVALID_ARGUMENT) {
        return 2;
    }
    if (argc > 1) {
        if (smtk_model_save(model, argv[1]) != SMTK_STATUS_OK) {
            fprintf(stderr, "save: %s\n", smtk_last_error());
            return 1;
        }
        SmtkModel *again = NULL;
        double second[N * 3];
        if (smtk_model_load(argv[1], &again) != SMTK_STATUS_OK ||
            smtk_model_forward(again, pos, NULL, N, second, N * 3) != SMTK_STATUS_OK ||
            memcmp(logits, second, sizeof logits) != 0) {
            return 3;
        }
        smtk_model_free(again);
    }
    smtk_model_free(model);
    printf("classes=%zu params=%llu first=%.17g\n", classes, (unsigned long long)params, logits[0]);
    return 0;
}
