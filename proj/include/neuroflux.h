#ifndef NEUROFLUX_H
#define NEUROFLUX_H

/*
 * C interface to the memory-budgeted local-learning engine.
 *
 * A run is one experiment: a network, a data source, a training mode, and an
 * output directory, all described by a JSON config. Open a run from that
 * config, then drive the pipeline stages; each stage writes its artifacts
 * under stable names in the run's output directory and reads its default
 * inputs from there, so stages compose across processes through the
 * filesystem alone. Identical inputs produce byte-identical artifacts.
 *
 * Every function returns NF_OK or one of the error codes below; the codes
 * double as process exit statuses. nf_last_error() describes the most recent
 * failure on the calling thread.
 */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define NF_OK 0
#define NF_ERR_INPUT 2    /* bad config, file, or argument */
#define NF_ERR_PLANNING 3 /* budget too small to place even one sample */
#define NF_ERR_NUMERIC 4  /* non-finite loss or gradient */
#define NF_ERR_CACHE 5    /* activation cache missing or corrupt */

/* Artifact names inside a run's output directory. */
#define NF_ARTIFACT_CONFIG "config.json"
#define NF_ARTIFACT_PROFILE "profile.json"
#define NF_ARTIFACT_PLAN "plan.json"
#define NF_ARTIFACT_CHECKPOINT "checkpoint.nfcm"
#define NF_ARTIFACT_METRICS "metrics.json"
#define NF_ARTIFACT_EXITS "exits.json"
#define NF_ARTIFACT_COMPACT "compact.nfcm"

typedef struct nf_run nf_run;

/* Library version, e.g. "0.1.0". Static storage, never NULL. */
const char* nf_version(void);

/*
 * Message for the calling thread's most recent failure. Empty string after
 * a success. The pointer stays valid until the thread's next nf_* call.
 */
const char* nf_last_error(void);

/*
 * Parse and validate a run config. On NF_OK, *out owns the run and must be
 * released with nf_run_close. nf_run_open reads the config from a file;
 * nf_run_open_text takes the JSON directly.
 */
int nf_run_open(const char* config_path, nf_run** out);
int nf_run_open_text(const char* config_json, nf_run** out);
void nf_run_close(nf_run* run);

/* Output directory the run writes artifacts into. Valid while run is open. */
const char* nf_run_output_dir(const nf_run* run);

/* Fit the per-layer (or whole-network) memory models -> profile.json. */
int nf_run_profile(nf_run* run);

/*
 * Group layers into training blocks under the configured budget ->
 * plan.json. profile_path NULL or empty reads the run's own profile.json.
 */
int nf_run_partition(nf_run* run, const char* profile_path);

/*
 * Train in the configured mode -> checkpoint.nfcm + metrics.json (plus
 * profile.json and plan.json, so the directory stands alone). plan_path
 * NULL or empty plans from scratch; a preset plan applies to the
 * budget-partitioned mode only.
 */
int nf_run_train(nf_run* run, const char* plan_path);

/*
 * Score every exit of the checkpoint on the validation split and choose the
 * earliest one within the configured tolerance of the best -> exits.json.
 * checkpoint_path NULL or empty reads the run's own checkpoint.
 */
int nf_run_evaluate(nf_run* run, const char* checkpoint_path);

/*
 * Truncate the checkpoint at an exit -> compact.nfcm. exit_layer >= 0 picks
 * that layer; -1 uses the choice recorded in exits_path (NULL or empty:
 * the run's own exits.json).
 */
int nf_run_export(nf_run* run, const char* checkpoint_path,
                  const char* exits_path, int exit_layer);

/*
 * Compare finished run directories: writes an aligned text table and a
 * fixed-schema CSV (either path may be NULL or empty to skip it). The table
 * includes step-count and forward-cost comparisons between budget-partitioned
 * and layerwise runs.
 */
int nf_report(const char* const* run_dirs, size_t count,
              const char* table_path, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif /* NEUROFLUX_H */
