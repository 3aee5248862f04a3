/* plseg C API: power-line segmentation with train-only booster heads.
 *
 * The shared library owns all model state behind an opaque handle; every
 * function returns a status code and leaves a human-readable message in
 * plseg_last_error() on failure. Strings returned through char** must be
 * released with plseg_free_string().
 */

#ifndef PLSEG_H
#define PLSEG_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum plseg_status {
  PLSEG_OK = 0,
  PLSEG_ERR_INVALID_ARG = 1, /* null pointers, malformed config */
  PLSEG_ERR_IO = 2,          /* file system, PNG, checkpoint decoding */
  PLSEG_ERR_CONTRACT = 3,    /* an operation precondition was violated */
  PLSEG_ERR_RUNTIME = 4      /* training aborts and other runtime failures */
} plseg_status;

typedef struct plseg_model plseg_model;

const char* plseg_version(void);

/* Thread-local message for the most recent failure. */
const char* plseg_last_error(void);

void plseg_free_string(char* s);

/* --- model lifecycle ----------------------------------------------------- */

/* Build a fresh model from a run-config JSON document. */
plseg_status plseg_model_create(const char* config_json, plseg_model** out);

/* Rebuild a model from a checkpoint file (config snapshot included). */
plseg_status plseg_model_load(const char* checkpoint_path, plseg_model** out);

void plseg_model_free(plseg_model* model);

plseg_status plseg_model_save(plseg_model* model, const char* path);

/* Write a booster-stripped inference checkpoint (backbone tensors only). */
plseg_status plseg_model_export_inference(plseg_model* model, const char* path);

/* JSON: per-component parameter counts for train and inference modes. */
plseg_status plseg_model_param_counts(plseg_model* model, char** json_out);

/* --- data ----------------------------------------------------------------- */

/* Materialize a synthetic line dataset under out_dir/{images,masks}. */
plseg_status plseg_synth_dataset(const char* config_json, int64_t count,
                                 const char* out_dir, int force);

/* --- training / evaluation / inference ------------------------------------ */

/* Train on data_root (layout + sizes from the model's config); writes the
 * echoed config, train_log.jsonl and checkpoint.plseg under out_dir. */
plseg_status plseg_train(plseg_model* model, const char* data_root,
                         const char* out_dir, int quiet);

/* Evaluate on a dataset; report JSON matches the metric report fields and
 * adds per-condition entries for vitl_like layouts.
 * aggregate: 0 = pooled confusion counts, 1 = per-image mean. */
plseg_status plseg_evaluate(plseg_model* model, const char* data_root,
                            const char* layout, int aggregate, char** json_out);

/* Segment one PNG. Writes a {0,255} mask PNG; overlay_path may be null,
 * otherwise writes the input with predicted line pixels painted red. */
plseg_status plseg_infer_file(plseg_model* model, const char* image_path,
                              const char* mask_out_path, const char* overlay_out_path);

#ifdef __cplusplus
}
#endif

#endif /* PLSEG_H */
