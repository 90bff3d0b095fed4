#ifndef HOPESPEECH_H
#define HOPESPEECH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_UTF8 = 2,
  HS_STATUS_INVALID_ARGUMENT = 3,
  HS_STATUS_IO = 4,
  HS_STATUS_BUFFER_TOO_SMALL = 5,
  HS_STATUS_INTERNAL = 6,
} HsStatus;

/**
 * Opaque fine-tuned classifier handle.
 */
typedef struct HsClassifier HsClassifier;

/**
 * Opaque language identifier handle.
 */
typedef struct HsLangId HsLangId;

/**
 * Opaque tokenizer handle.
 */
typedef struct HsTokenizer HsTokenizer;

/**
 * Summary metrics filled by [`hs_evaluate`].
 */
typedef struct HsMetrics {
  double accuracy;
  double macro_f1;
  double weighted_f1;
} HsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *hs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hs_version(void);

/**
 * Loads a tokenizer JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_tokenizer_load(const char *path, struct HsTokenizer **out);

/**
 * # Safety
 * `tok` must come from [`hs_tokenizer_load`] and not be used afterwards.
 */
void hs_tokenizer_free(struct HsTokenizer *tok);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `tok` must be null or a live handle.
 */
size_t hs_tokenizer_vocab_size(const struct HsTokenizer *tok);

/**
 * Encodes `text` into a frame of exactly `max_len` ids with its attention
 * mask. `ids` and `mask` must each hold `capacity >= max_len` elements.
 * `overflow` (optional) receives 1 when the text was truncated.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum HsStatus hs_tokenizer_encode(const struct HsTokenizer *tok,
                                  const char *text,
                                  size_t max_len,
                                  uint32_t *ids,
                                  uint8_t *mask,
                                  size_t capacity,
                                  uint8_t *overflow);

/**
 * Loads a language identifier JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_langid_load(const char *path, struct HsLangId **out);

/**
 * # Safety
 * `model` must come from [`hs_langid_load`] and not be used afterwards.
 */
void hs_langid_free(struct HsLangId *model);

/**
 * Identifies the language of `text`. `language` receives a string owned by
 * the handle; `confidence` (optional) the posterior of that language.
 *
 * # Safety
 * `model` must be a live handle; `text` NUL-terminated; `language` writable.
 */
enum HsStatus hs_langid_identify(const struct HsLangId *model,
                                 const char *text,
                                 const char **language,
                                 double *confidence);

/**
 * Loads a fine-tuned checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_classifier_load(const char *dir, struct HsClassifier **out);

/**
 * # Safety
 * `clf` must come from [`hs_classifier_load`] and not be used afterwards.
 */
void hs_classifier_free(struct HsClassifier *clf);

/**
 * Number of labels, or 0 for a null handle.
 *
 * # Safety
 * `clf` must be null or a live handle.
 */
size_t hs_classifier_num_labels(const struct HsClassifier *clf);

/**
 * Label name owned by the handle, or null when out of range.
 *
 * # Safety
 * `clf` must be null or a live handle.
 */
const char *hs_classifier_label_name(const struct HsClassifier *clf, size_t index);

/**
 * Predicted label index for `text`.
 *
 * # Safety
 * `clf` must be a live handle; `text` NUL-terminated; `label` writable.
 */
enum HsStatus hs_classifier_predict(const struct HsClassifier *clf,
                                    const char *text,
                                    size_t *label);

/**
 * Accuracy, macro F1, and weighted F1 of `n` prediction/gold index pairs
 * over `n_labels` classes.
 *
 * # Safety
 * `preds` and `golds` must hold `n` elements; `out` must be writable.
 */
enum HsStatus hs_evaluate(const size_t *preds,
                          const size_t *golds,
                          size_t n,
                          size_t n_labels,
                          struct HsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPESPEECH_H */
