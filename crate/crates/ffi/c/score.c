/* Load a checkpoint and print the top 5 ids for a two-set history.
 *
 *   cargo build -p pietsp-ffi --release
 *   cc crates/ffi/c/score.c -Icrates/ffi/include -Ltarget/release -lpietsp_ffi -o score
 *   LD_LIBRARY_PATH=target/release ./score ckpt/best
 */
#include <stdio.h>

#include "pietsp.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s CHECKPOINT\n", argv[0]);
        return 2;
    }
    PietspModel *model = NULL;
    if (pietsp_model_load(argv[1], &model) != PIETSP_STATUS_OK) {
        fprintf(stderr, "load failed: %s\n", pietsp_last_error());
        return 1;
    }
    size_t ids[] = {0, 1, 1, 2};
    size_t offsets[] = {0, 2, 4};
    size_t top[5];
    double scores[5];
    size_t written = 0;
    PietspStatus status = pietsp_model_predict_topk(model, ids, offsets, 2, 5, top, scores, &written);
    if (status != PIETSP_STATUS_OK) {
        fprintf(stderr, "predict failed (%d): %s\n", (int)status, pietsp_last_error());
        pietsp_model_free(model);
        return 1;
    }
    printf("pietsp %s, |E|=%zu\n", pietsp_version(), pietsp_model_vocab_size(model));
    for (size_t i = 0; i < written; i++) {
        printf("%zu\t%.6f\n", top[i], scores[i]);
    }
    pietsp_model_free(model);
    return 0;
}
