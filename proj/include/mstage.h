/* mstage: multi-stage temporal sequence labeling, C API.
 *
 * Every function returns MS_OK or an ms_status error code; on failure
 * ms_last_error() holds a one-line description (thread-local, valid until the
 * next failing call on the same thread). Paths are UTF-8. Config arguments
 * are JSON: `config_path` optionally names a JSON file, `overrides_json`
 * optionally holds a JSON object merged over it (objects merge recursively,
 * scalars and arrays replace). The schemas are documented in the README.
 */
#ifndef MSTAGE_H
#define MSTAGE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ms_status {
  MS_OK = 0,
  MS_ERR_INVALID_ARG = 1, /* malformed call or argument */
  MS_ERR_CONFIG = 2,      /* config schema or contract violation */
  MS_ERR_DEPENDENCY = 3,  /* missing or corrupt input artifact */
  MS_ERR_NUMERIC = 4,     /* non-finite values, diverged training */
  MS_ERR_IO = 5,          /* filesystem failure */
  MS_ERR_INTERNAL = 6
} ms_status;

const char* ms_version(void);
const char* ms_last_error(void);

/* ---- composed model: predictor checkpoint plus optional refiner ---- */

typedef struct ms_model ms_model;
typedef struct ms_stream ms_stream;

ms_status ms_model_open(const char* predictor_path, const char* refiner_path_or_null,
                        ms_model** out);
void ms_model_close(ms_model* model);

ms_status ms_model_input_dim(const ms_model* model, size_t* out);
ms_status ms_model_classes(const ms_model* model, size_t* out);
/* 1 when every stage is causal (streamable), else 0 */
ms_status ms_model_causal(const ms_model* model, int* out);

/* features: t_len x in_dim row-major. labels_out: t_len entries.
 * probs_out_or_null: t_len x classes row-major, final-stage probabilities. */
ms_status ms_model_infer(const ms_model* model, const double* features, size_t t_len,
                         size_t in_dim, int32_t* labels_out, double* probs_out_or_null);

/* Frame-at-a-time inference; agrees with ms_model_infer on every prefix.
 * Opening a stream on an acausal model fails with MS_ERR_CONFIG. The model
 * must outlive the stream. */
ms_status ms_stream_open(const ms_model* model, ms_stream** out);
ms_status ms_stream_push(ms_stream* stream, const double* frame, size_t in_dim,
                         int32_t* label_out, double* probs_out_or_null);
void ms_stream_close(ms_stream* stream);

/* ---- pipeline steps (one per CLI subcommand) ---- */

/* Synthetic benchmark generation; config schema = the generator fields. */
ms_status ms_gen_dataset(const char* config_path, const char* overrides_json,
                         const char* out_dir);

/* Trains the predictor on the manifest's train split.
 * Config: {filters, blocks, seed, train:{epochs, lr, lambda, shuffle,
 * grad_clip, checkpoint_every}}. */
ms_status ms_train_predictor(const char* manifest_path, const char* config_path,
                             const char* overrides_json, const char* out_checkpoint,
                             const char* out_history_or_null);

/* Runs a predictor over one split; writes <id>.mspp per video plus index.json. */
ms_status ms_predict_split(const char* manifest_path, const char* split,
                           const char* predictor_checkpoint, const char* out_dir);

/* Builds disturbed refinement samples from the train split.
 * Config: {types:["cv"|"mhf"|"rm"...], k, mask_ratio, seed, train:{...}};
 * fold predictors reuse the checkpoint's architecture. */
ms_status ms_gen_disturbed(const char* manifest_path, const char* predictor_checkpoint,
                           const char* config_path, const char* overrides_json,
                           const char* out_dir);

/* Trains a refiner on a gen-disturbed output directory.
 * Config: {kind, stacks, hidden, filters, blocks, seed, train:{...}}. */
ms_status ms_train_refiner(const char* samples_path, const char* config_path,
                           const char* overrides_json, const char* out_checkpoint,
                           const char* out_history_or_null);

/* Joint end-to-end baseline on the train split.
 * Config: {predictor:{filters, blocks}, refiner:{kind, stacks, hidden,
 * filters, blocks}, seed, train:{...}}. */
ms_status ms_train_e2e(const char* manifest_path, const char* config_path,
                       const char* overrides_json, const char* out_predictor,
                       const char* out_refiner, const char* out_history_or_null);

/* Batch or streaming (online != 0) inference over an MSPF feature file. */
ms_status ms_infer_file(const char* predictor_checkpoint, const char* refiner_checkpoint_or_null,
                        const char* features_path, int online, const char* out_labels,
                        const char* out_probs_or_null);

/* Evaluates a model on one split; writes a metrics report (JSON, optional CSV). */
ms_status ms_evaluate(const char* manifest_path, const char* split,
                      const char* predictor_checkpoint, const char* refiner_checkpoint_or_null,
                      const char* out_report, const char* out_csv_or_null);

/* Per-video and aggregate deltas of report B against report A. */
ms_status ms_compare(const char* report_a, const char* report_b, const char* out_json);

/* Full protocol: dataset, per-seed predictor/E2E/non-E2E training, reports,
 * summary and ledger. Config schema as documented (experiment). */
ms_status ms_run_experiment(const char* config_path, const char* overrides_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MSTAGE_H */
