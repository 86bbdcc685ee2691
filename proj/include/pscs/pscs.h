/* pscs: path-based neural code search, C interface.
 *
 * Every function returning pscs_status leaves a message for
 * pscs_last_error() on failure (per thread). Handles are opaque; free them
 * with the matching *_free function. Strings returned through char** out
 * parameters are owned by the caller and released with pscs_string_free.
 */
#ifndef PSCS_H
#define PSCS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PSCS_API __declspec(dllexport)
#else
#define PSCS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pscs_status {
  PSCS_OK = 0,
  PSCS_E_INVALID_ARGUMENT = 1,
  PSCS_E_IO = 2,
  PSCS_E_FORMAT = 3,     /* bad magic, version, malformed file */
  PSCS_E_PARSE = 4,      /* source code outside the supported Java subset */
  PSCS_E_NUMERIC = 5,    /* non-finite loss during training */
  PSCS_E_EMPTY_QUERY = 6,
  PSCS_E_INVARIANT = 7,  /* an evaluation report failed its own checks */
  PSCS_E_INTERNAL = 8
} pscs_status;

typedef struct pscs_model pscs_model;
typedef struct pscs_index pscs_index;
typedef struct pscs_results pscs_results;

PSCS_API const char* pscs_version(void);
PSCS_API const char* pscs_status_name(pscs_status status);
PSCS_API const char* pscs_last_error(void);
PSCS_API void pscs_string_free(char* s);

/* ---- preprocessing */

typedef struct pscs_preprocess_options {
  const char* input;      /* JSON lines {"id","code","docstring"} */
  const char* test_input; /* optional */
  const char* out_dir;
  uint32_t min_count;
  uint32_t word_max;
  uint32_t node_max;
  int32_t max_height;
  int32_t max_width;
  uint32_t cap;
  uint64_t seed;
} pscs_preprocess_options;

PSCS_API void pscs_preprocess_options_init(pscs_preprocess_options* options);
/* summary_json may be NULL. */
PSCS_API pscs_status pscs_preprocess(const pscs_preprocess_options* options, char** summary_json);

/* ---- training */

typedef struct pscs_train_options {
  int32_t d, hidden, q, m, l, g, batch;
  float dropout, margin, delta, lr;
  const char* ablation; /* NULL or "full" or comma-separated flags */
  int32_t epochs;
  uint64_t seed;
  int32_t checkpoint_every;
  int32_t patience;
  double validation_fraction;
  int32_t verbose; /* progress lines on stderr */
} pscs_train_options;

PSCS_API void pscs_train_options_init(pscs_train_options* options);
/* Trains on <data_dir>/train.paths.jsonl and writes checkpoints plus the
 * vocabularies into out_dir; the final model is out_dir/model.bin. */
PSCS_API pscs_status pscs_train(const char* data_dir, const char* out_dir, const pscs_train_options* options,
                                char** history_json);

/* ---- models */

/* vocab_dir NULL: the vocabularies are read from the checkpoint's directory. */
PSCS_API pscs_status pscs_model_load(const char* checkpoint, const char* vocab_dir, pscs_model** out);
PSCS_API void pscs_model_free(pscs_model* model);
PSCS_API pscs_status pscs_model_info(const pscs_model* model, char** json);

/* ---- index and search */

/* split: "train", "test" or "all" (NULL = "all"). */
PSCS_API pscs_status pscs_index_build(pscs_model* model, const char* data_dir, const char* split, pscs_index** out);
PSCS_API pscs_status pscs_index_save(const pscs_index* index, const char* path);
PSCS_API pscs_status pscs_index_load(const char* path, pscs_index** out);
PSCS_API size_t pscs_index_size(const pscs_index* index);
PSCS_API void pscs_index_free(pscs_index* index);

PSCS_API pscs_status pscs_search(pscs_model* model, const pscs_index* index, const char* query, size_t k,
                                 pscs_results** out);
PSCS_API const char* pscs_results_query(const pscs_results* results);
PSCS_API size_t pscs_results_count(const pscs_results* results);
PSCS_API const char* pscs_results_id(const pscs_results* results, size_t i);
PSCS_API float pscs_results_score(const pscs_results* results, size_t i);
PSCS_API const char* pscs_results_preview(const pscs_results* results, size_t i);
PSCS_API void pscs_results_free(pscs_results* results);

/* ---- evaluation */

typedef struct pscs_eval_options {
  const int64_t* ks; /* NULL: {1, 5, 10} */
  size_t num_ks;
  const char* ablation; /* attention flags switched off at inference; NULL = as trained */
  int32_t by_length;
  const char* split; /* NULL = "test" */
} pscs_eval_options;

PSCS_API void pscs_eval_options_init(pscs_eval_options* options);
/* Returns PSCS_E_INVARIANT (with both reports filled) when a check fails. */
PSCS_API pscs_status pscs_eval(pscs_model* model, const char* data_dir, const pscs_eval_options* options,
                               char** report_json, char** report_text);

/* variants: ';'-separated ablation specs, e.g. "tokens_only;nodes_only". */
PSCS_API pscs_status pscs_ablate(const char* data_dir, const char* out_dir, const pscs_train_options* options,
                                 const char* variants, char** table_json, char** table_text);

PSCS_API pscs_status pscs_timing(pscs_model* model, const pscs_index* index, const char* data_dir, size_t trials,
                                 char** report_json, char** report_text);

/* ---- synthetic data */

PSCS_API pscs_status pscs_synth(const char* train_file, const char* test_file, size_t train_pairs,
                                size_t test_pairs, size_t variants, uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif
