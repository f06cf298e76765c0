/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SYNFUSE_H
#define SYNFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_ARGUMENT = 1,
  SF_STATUS_INVALID_UTF8 = 2,
  // Bad argument values or configuration.
  SF_STATUS_INVALID = 3,
  // Unreadable or malformed files and corpora.
  SF_STATUS_DATA = 4,
  // NaN or other numeric breakdown.
  SF_STATUS_NUMERIC = 5,
  // Caller-provided buffer is too small.
  SF_STATUS_BUFFER_TOO_SMALL = 6,
  SF_STATUS_PANIC = 7,
} SfStatus;

// Fine-tuned classifier loaded from a checkpoint.
typedef struct SfClassifier SfClassifier;

// BPE merge table.
typedef struct SfMerges SfMerges;

// Trained translator loaded from a checkpoint.
typedef struct SfTranslator SfTranslator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *sf_last_error(void);

// Library version as a static string.
const char *sf_version(void);

// # Safety
// `s` must come from this library or be null.
void sf_string_free(char *s);

// Corpus BLEU-4 in [0, 1] over `n` hypothesis/reference pairs.
//
// # Safety
// `hyps` and `refs` must each point to `n` NUL-terminated strings.
enum SfStatus sf_bleu(const char *const *hyps, const char *const *refs, size_t n, double *out);

// Learns `num_merges` merges from newline-separated sentences.
//
// # Safety
// `corpus` must be a NUL-terminated string and `out` writable.
enum SfStatus sf_merges_learn(const char *corpus, size_t num_merges, struct SfMerges **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SfStatus sf_merges_load(const char *path, struct SfMerges **out);

// # Safety
// `merges` must be a live handle and `path` a NUL-terminated string.
enum SfStatus sf_merges_save(const struct SfMerges *merges, const char *path);

// Number of merges, or 0 for a null handle.
//
// # Safety
// `merges` must be a live handle or null.
size_t sf_merges_len(const struct SfMerges *merges);

// Space-separated subwords of `sentence`, word ends marked with `</w>`.
//
// # Safety
// `merges` must be a live handle, `sentence` NUL-terminated, `out` writable.
enum SfStatus sf_merges_segment(const struct SfMerges *merges, const char *sentence, char **out);

// # Safety
// `merges` must come from this library or be null; it is invalid afterwards.
void sf_merges_free(struct SfMerges *merges);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SfStatus sf_translator_load(const char *path, struct SfTranslator **out);

// Greedy translation of a whitespace-tokenized sentence; words are
// POS-tagged by the built-in fallback heuristics.
//
// # Safety
// `translator` must be a live handle, `sentence` NUL-terminated, `out` writable.
enum SfStatus sf_translator_translate(const struct SfTranslator *translator,
                                      const char *sentence,
                                      size_t max_len,
                                      char **out);

// Greedy translation of `n` words with caller-supplied POS tags. Tags
// outside the model's inventory map to the unknown tag.
//
// # Safety
// `words` and `tags` must each point to `n` NUL-terminated strings.
enum SfStatus sf_translator_translate_tagged(const struct SfTranslator *translator,
                                             const char *const *words,
                                             const char *const *tags,
                                             size_t n,
                                             size_t max_len,
                                             char **out);

// # Safety
// `translator` must come from this library or be null; it is invalid afterwards.
void sf_translator_free(struct SfTranslator *translator);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SfStatus sf_classifier_load(const char *path, struct SfClassifier **out);

// Number of labels, or 0 for a null handle.
//
// # Safety
// `classifier` must be a live handle or null.
size_t sf_classifier_num_labels(const struct SfClassifier *classifier);

// Label name for class `index`, owned by the handle; null when out of range.
//
// # Safety
// `classifier` must be a live handle or null.
const char *sf_classifier_label(const struct SfClassifier *classifier, size_t index);

// Classifies sentence `a`, optionally paired with `b` (null for single
// sentences). Writes the predicted class index and, when `probs` is not
// null, one probability per label into `probs[0..capacity]`.
//
// # Safety
// `classifier` must be a live handle, `a` NUL-terminated, `b` NUL-terminated
// or null, `label` writable, `probs` valid for `capacity` writes or null.
enum SfStatus sf_classifier_predict(const struct SfClassifier *classifier,
                                    const char *a,
                                    const char *b,
                                    size_t *label,
                                    double *probs,
                                    size_t capacity);

// # Safety
// `classifier` must come from this library or be null; it is invalid afterwards.
void sf_classifier_free(struct SfClassifier *classifier);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNFUSE_H */
