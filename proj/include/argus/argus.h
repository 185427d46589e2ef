#ifndef ARGUS_H
#define ARGUS_H

/* C interface to the argus core. Everything behind it is C++; callers see
 * opaque handles, status codes and malloc'd strings only. All functions are
 * synchronous. Strings returned through char** outputs are owned by the
 * caller and released with argus_string_free. Error messages are per thread
 * and overwritten by the next failing call on that thread. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum argus_status {
  ARGUS_OK = 0,
  ARGUS_E_INVALID_CONFIG = 1,
  ARGUS_E_PLACEMENT = 2,
  ARGUS_E_DATASET_FORMAT = 3,
  ARGUS_E_EMPTY_QA = 4,
  ARGUS_E_SHAPE = 5,
  ARGUS_E_UNDEFINED_LOSS = 6,
  ARGUS_E_GRAD = 7,
  ARGUS_E_RANGE = 8,
  ARGUS_E_NUMERIC = 9,
  ARGUS_E_VOCAB = 10,
  ARGUS_E_EMPTY_INPUT = 11,
  ARGUS_E_TRANSFER = 12,
  ARGUS_E_FREEZE_VIOLATION = 13,
  ARGUS_E_CHECKSUM = 14,
  ARGUS_E_STAGE_ORDER = 15,
  ARGUS_E_IO = 16,
  ARGUS_E_INTERNAL = 17
} argus_status;

const char* argus_version(void);
const char* argus_status_name(argus_status s);

/* 1 when the caller can fix the problem (bad config, wrong stage order,
 * missing QA items); 0 for runtime failures (I/O, numeric blowups,
 * corrupted checkpoints). */
int argus_status_is_usage(argus_status s);

/* Message from the most recent failing call on this thread, or "". */
const char* argus_last_error(void);

void argus_string_free(char* s);

/* Run context: one effective run configuration plus the fixed vocabulary.
 * Configure with load_config/set, then hand it to the operations below. */
typedef struct argus_ctx argus_ctx;

argus_status argus_ctx_new(argus_ctx** out);
void argus_ctx_free(argus_ctx* ctx);

/* Replaces fields from a key=value file; unknown keys fail. */
argus_status argus_ctx_load_config(argus_ctx* ctx, const char* path);
/* Applies one "key=value" override. */
argus_status argus_ctx_set(argus_ctx* ctx, const char* key_value);
/* Canonical dump of the effective configuration. */
argus_status argus_ctx_config(argus_ctx* ctx, char** out_text);
argus_status argus_ctx_config_hash(argus_ctx* ctx, char** out_hex);

/* Generates a dataset under out_dir. scenes <= 0 derives the scene count and
 * train/val split from the configured train_scenes/eval_scenes; a positive
 * count uses the default 60/20/20 split. workers <= 0 means one thread. */
argus_status argus_gen_data(argus_ctx* ctx, const char* out_dir, int scenes,
                            int workers);

/* Pretrains the frozen seq2seq stub on the train split's oracle text and
 * writes a stage-0 checkpoint. */
argus_status argus_pretrain_llm(argus_ctx* ctx, const char* data_dir,
                                const char* ckpt_out);

/* Runs one training stage (1..3) from ckpt_in to ckpt_out. A stage-1 call on
 * a bare stage-0 checkpoint initializes the remaining modules first. Writes
 * per-step records as JSON lines when record_out is non-NULL. */
argus_status argus_train_stage(argus_ctx* ctx, const char* data_dir, int stage,
                               const char* ckpt_in, const char* ckpt_out,
                               const char* record_out);

/* Greedy evaluation of a checkpoint on the val split; mode is "full",
 * "views_only" or "points_only". Writes metrics JSON to metrics_out. */
argus_status argus_eval(argus_ctx* ctx, const char* data_dir, const char* ckpt,
                        const char* mode, const char* metrics_out);

/* Trains and evaluates every setting of one ablation axis ("mode",
 * "n_views", "aggregator", "pose", "init", "stages") from a shared stage-0
 * stub; writes table.md and metrics.json under out_dir. */
argus_status argus_ablate(argus_ctx* ctx, const char* data_dir,
                          const char* axis, const char* out_dir);

/* Renders the markdown metrics table for a metrics JSON file. */
argus_status argus_report(const char* metrics_json, char** out_markdown);

#ifdef __cplusplus
}
#endif

#endif
