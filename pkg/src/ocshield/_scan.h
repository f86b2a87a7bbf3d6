/* Minimum Hamming distance scan over a column-major byte matrix.
 *
 * The matrix holds n_rows output configurations of length m_trees; column m
 * occupies bytes [m * n_rows, (m + 1) * n_rows).  n_rows must be a multiple
 * of 32 for the wide kernel and m_trees <= 255 so per-lane byte sums cannot
 * overflow.
 */
#ifndef OCSHIELD_SCAN_H
#define OCSHIELD_SCAN_H

#include <stddef.h>
#include <stdint.h>

#if (defined(__x86_64__) || defined(__i386__)) && (defined(__GNUC__) || defined(__clang__))
#define OCSHIELD_HAVE_AVX2_PATH 1
#include <immintrin.h>
#else
#define OCSHIELD_HAVE_AVX2_PATH 0
#endif

#if defined(__GNUC__) && !defined(__clang__)
#define OCSHIELD_NO_VECTORIZE __attribute__((optimize("no-tree-vectorize")))
#else
#define OCSHIELD_NO_VECTORIZE
#endif

/* Row-at-a-time reference loop; kept scalar on purpose so --no-simd measures
 * the unvectorized scan. */
static OCSHIELD_NO_VECTORIZE int
ocs_scan_scalar(const uint8_t *mat, size_t n_rows, size_t m_trees, const uint8_t *oc)
{
    int best = 255;
    for (size_t r = 0; r < n_rows; ++r) {
        int d = 0;
        const uint8_t *p = mat + r;
        for (size_t m = 0; m < m_trees; ++m, p += n_rows)
            d += (*p != oc[m]);
        if (d < best)
            best = d;
    }
    return best;
}

#if OCSHIELD_HAVE_AVX2_PATH

__attribute__((target("avx2"))) static int
ocs_scan_avx2(const uint8_t *mat, size_t n_rows, size_t m_trees, const uint8_t *oc)
{
    const __m256i one = _mm256_set1_epi8(1);
    __m256i acc = _mm256_set1_epi8((char)255);
    for (size_t i = 0; i < n_rows; i += 32) {
        __m256i sum = _mm256_setzero_si256();
        const uint8_t *col = mat + i;
        for (size_t m = 0; m < m_trees; ++m, col += n_rows) {
            __m256i reg0 = _mm256_set1_epi8((char)oc[m]);
            __m256i reg1 = _mm256_loadu_si256((const __m256i *)col);
            __m256i eq = _mm256_cmpeq_epi8(reg0, reg1);
            /* (reg0 != reg1) & 1 */
            sum = _mm256_add_epi8(sum, _mm256_andnot_si256(eq, one));
        }
        acc = _mm256_min_epu8(acc, sum);
    }
    /* horizontal byte minimum of acc */
    __m128i v = _mm_min_epu8(_mm256_castsi256_si128(acc), _mm256_extracti128_si256(acc, 1));
    v = _mm_min_epu8(v, _mm_srli_si128(v, 8));
    v = _mm_min_epu8(v, _mm_srli_si128(v, 4));
    v = _mm_min_epu8(v, _mm_srli_si128(v, 2));
    v = _mm_min_epu8(v, _mm_srli_si128(v, 1));
    return _mm_cvtsi128_si32(v) & 0xff;
}

static int
ocs_cpu_has_avx2(void)
{
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") ? 1 : 0;
}

#else

static int
ocs_scan_avx2(const uint8_t *mat, size_t n_rows, size_t m_trees, const uint8_t *oc)
{
    return ocs_scan_scalar(mat, n_rows, m_trees, oc);
}

static int
ocs_cpu_has_avx2(void)
{
    return 0;
}

#endif

#endif /* OCSHIELD_SCAN_H */
