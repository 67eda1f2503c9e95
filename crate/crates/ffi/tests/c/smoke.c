#include <stdio.h>
#include <string.h>
#include "memaudit.h"

int main(int argc, char **argv) {
    if (argc != 3) return 10;
    MaCorpus *c = NULL;
    if (ma_corpus_load(argv[1], argv[2], &c) != MA_STATUS_OK) {
        fprintf(stderr, "load: %s\n", ma_last_error_message());
        return 11;
    }
    size_t dim = ma_corpus_dim(c);
    float q[16] = {0};
    if (dim != 4) return 12;
    q[2] = 1.0f;
    MaNeighbor hits[2];
    size_t n = 0;
    if (ma_corpus_top_k(c, q, dim, 2, hits, 2, &n) != MA_STATUS_OK || n != 2) return 13;
    printf("top %zu %.6f\n", hits[0].row, hits[0].score);

    char *prompt = NULL;
    if (ma_render_prompt(MA_STRATEGY_NEGATION, "a cat", &prompt) != MA_STATUS_OK) return 14;
    printf("prompt %s\n", prompt);
    ma_string_free(prompt);

    double xs[3] = {1, 2, 3}, ys[3] = {2, 4, 6}, r = 0;
    if (ma_pearson(xs, ys, 3, &r) != MA_STATUS_OK) return 15;
    printf("r %.3f\n", r);
    printf("high %s\n", ma_strategy_name((uint32_t)ma_recommend_strategy(MA_RISK_TIER_HIGH)));
    ma_corpus_free(c);
    return 0;
}
