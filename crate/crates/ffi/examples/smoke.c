#include <stdio.h>
#include "pcct.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        PcctStatus s_ = (call);                                            \
        if (s_ != PCCT_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, pcct_last_error()); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    PcctDataset *ds = NULL;
    PcctConfig *cfg = NULL;
    PcctModel *model = NULL;
    size_t n = 0, dim = 0, k = 0;
    double mf1 = 0.0, loss = 0.0;

    CHECK(pcct_dataset_generate("separable-3", 1, &ds));
    CHECK(pcct_dataset_len(ds, &n));
    CHECK(pcct_dataset_dim(ds, &dim));
    CHECK(pcct_dataset_num_classes(ds, &k));
    CHECK(pcct_config_default(&cfg));
    CHECK(pcct_config_set_epochs(cfg, 20, 5, 20));
    CHECK(pcct_train(cfg, ds, &model));
    CHECK(pcct_model_evaluate(model, ds, &mf1));

    double a[2] = {0.0, 0.0}, p[2] = {1.0, 0.0}, q[2] = {0.0, 1.0};
    CHECK(pcct_triplet_loss(a, p, q, 2, 0.5, 2, &loss));

    PcctStatus bad = pcct_dataset_generate("no-such-preset", 0, &ds);
    if (bad != PCCT_STATUS_CONTRACT || pcct_last_error() == NULL) {
        fprintf(stderr, "expected a contract error\n");
        return 1;
    }

    printf("n=%zu dim=%zu k=%zu mf1=%.2f triplet=%.3f\n", n, dim, k, mf1, loss);
    pcct_model_free(model);
    pcct_config_free(cfg);
    pcct_dataset_free(ds);
    return 0;
}
