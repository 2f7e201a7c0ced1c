/* Generate phantoms, corrupt one image and score a toy ranking through the C ABI.
 *
 *   cc -I crates/ffi/include crates/ffi/examples/smoke.c \
 *      -L target/debug -lkshift_ffi -Wl,-rpath,target/debug -o smoke
 *   ./smoke /tmp/phantoms
 */
#include <stdio.h>
#include <string.h>

#include "kshift.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        KsStatus s_ = (call);                                              \
        if (s_ != KS_STATUS_OK) {                                          \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_,        \
                    ks_last_error_message());                              \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(int argc, char **argv) {
    const char *dir = argc > 1 ? argv[1] : "phantoms";
    char path[4096];

    CHECK(ks_phantom_generate("{\"size\": 32, \"n\": 4, \"seed\": 7}", dir));
    snprintf(path, sizeof path, "%s/00000.mrt1", dir);

    KsTensor *img = NULL, *noisy = NULL;
    CHECK(ks_tensor_read_mrt1(path, &img));
    CHECK(ks_artifact_apply("{\"kind\": \"rician\", \"snr\": 5, \"seed\": 1}", img, 0, &noisy));

    size_t dims[2];
    CHECK(ks_tensor_dims(noisy, dims, 2));
    const double *a = ks_tensor_data(img), *b = ks_tensor_data(noisy);
    double mse = 0.0;
    for (size_t i = 0; i < ks_tensor_len(img); i++) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= (double)ks_tensor_len(img);

    const double scores[4] = {0.1, 0.4, 0.35, 0.8};
    const uint8_t labels[4] = {0, 0, 1, 1};
    double auc = 0.0;
    CHECK(ks_auroc(scores, labels, 4, &auc));

    printf("kshift %s: %zux%zu image, rician mse %.3g, auroc %.2f\n", ks_version(), dims[0], dims[1], mse, auc);

    if (ks_tensor_read_mrt1("/nonexistent.mrt1", &img) != KS_STATUS_IO) return 1;

    ks_tensor_free(img);
    ks_tensor_free(noisy);
    return auc == 0.75 ? 0 : 1;
}
