#ifndef METATS_H
#define METATS_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum MetatsStatus {
  METATS_STATUS_OK = 0,
  METATS_STATUS_NULL_POINTER = 1,
  METATS_STATUS_INVALID_ARGUMENT = 2,
  METATS_STATUS_DIMENSION_MISMATCH = 3,
  METATS_STATUS_NOT_POSITIVE_DEFINITE = 4,
  METATS_STATUS_IO = 5,
  METATS_STATUS_PARSE = 6,
  METATS_STATUS_PANIC = 7,
} MetatsStatus;

// Thompson-sampling agent for one track, with its own random stream.
typedef struct MetatsAgent MetatsAgent;

// Loaded experiment configuration.
typedef struct MetatsConfig MetatsConfig;

// Meta-posterior over the instance-prior mean.
typedef struct MetatsMetaPosterior MetatsMetaPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *metats_last_error(void);

// Create `N(0, σ_q² I_d)` with instance-prior variance `sigma0_sq` and
// loss-noise variance `noise_var`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MetatsStatus metats_meta_new(double sigma_q_sq,
                                  uintptr_t d,
                                  double sigma0_sq,
                                  double noise_var,
                                  struct MetatsMetaPosterior **out);

// Apply one track's joint update. `contexts` holds `n × d` values row-major.
//
// # Safety
// `handle` must come from [`metats_meta_new`]; `contexts` and `losses` must
// point to `n·d` and `n` readable values.
enum MetatsStatus metats_meta_update(struct MetatsMetaPosterior *handle,
                                     const double *contexts,
                                     const double *losses,
                                     uintptr_t n);

// Copy `μ_s` (d values) into `out`.
//
// # Safety
// `handle` must be live and `out` must hold `len` writable values.
enum MetatsStatus metats_meta_mean(const struct MetatsMetaPosterior *handle,
                                   double *out,
                                   uintptr_t len);

// Copy `Λ_s` (d·d values, row-major) into `out`.
//
// # Safety
// `handle` must be live and `out` must hold `len` writable values.
enum MetatsStatus metats_meta_precision(const struct MetatsMetaPosterior *handle,
                                        double *out,
                                        uintptr_t len);

// Draw an instance-prior mean `μ ~ N(μ_s, Λ_s⁻¹)` from a stream seeded with
// `seed`.
//
// # Safety
// `handle` must be live and `out` must hold `len` writable values.
enum MetatsStatus metats_meta_sample_prior_mean(const struct MetatsMetaPosterior *handle,
                                                uint64_t seed,
                                                double *out,
                                                uintptr_t len);

// # Safety
// `handle` must come from [`metats_meta_new`] and not be used afterwards.
// NULL is ignored.
void metats_meta_free(struct MetatsMetaPosterior *handle);

// Create an agent with prior `N(prior_mean, prior_var·I_d)`.
//
// # Safety
// `prior_mean` must point to `d` readable values and `out` to storage for
// one handle.
enum MetatsStatus metats_agent_new(const double *prior_mean,
                                   uintptr_t d,
                                   double prior_var,
                                   uintptr_t num_waveforms,
                                   uintptr_t num_observations,
                                   double noise_var,
                                   uint64_t seed,
                                   struct MetatsAgent **out);

// Thompson-sampling choice under `observation`.
//
// # Safety
// `handle` must be live and `out_waveform` writable.
enum MetatsStatus metats_agent_select(struct MetatsAgent *handle,
                                      uintptr_t observation,
                                      uintptr_t *out_waveform);

// Record the loss of `waveform` under `observation`. The regressor is the
// pair's context before this loss is added, i.e. the one the last selection
// saw.
//
// # Safety
// `handle` must be live.
enum MetatsStatus metats_agent_record(struct MetatsAgent *handle,
                                      uintptr_t observation,
                                      uintptr_t waveform,
                                      double loss);

// Copy the agent's posterior mean (d values) into `out`.
//
// # Safety
// `handle` must be live and `out` must hold `len` writable values.
enum MetatsStatus metats_agent_posterior_mean(const struct MetatsAgent *handle,
                                              double *out,
                                              uintptr_t len);

// # Safety
// `handle` must come from [`metats_agent_new`] and not be used afterwards.
// NULL is ignored.
void metats_agent_free(struct MetatsAgent *handle);

// `clamp(sinr_post / sinr_target, 0, 1)` on linear power ratios.
double metats_compute_loss(double sinr_post, double sinr_target);

// Single-task PAC-Bayes bound.
//
// # Safety
// `out` must be writable.
enum MetatsStatus metats_pac_bayes_single(double kl,
                                          uintptr_t m,
                                          double delta,
                                          double empirical_error,
                                          double *out);

// Load a configuration file. A NULL `path` yields the defaults.
//
// # Safety
// `path` must be NULL or a NUL-terminated string; `out` must be writable.
enum MetatsStatus metats_config_load(const char *path, struct MetatsConfig **out);

// Run every replicate of `config` and write the CSVs into `out_dir`, or
// the configured output directory when `out_dir` is NULL.
//
// # Safety
// `config` must be live; `out_dir` must be NULL or NUL-terminated.
enum MetatsStatus metats_run(const struct MetatsConfig *config, const char *out_dir);

// # Safety
// `config` must come from [`metats_config_load`] and not be used
// afterwards. NULL is ignored.
void metats_config_free(struct MetatsConfig *config);

// Override the number of tracks, CPIs and seeds of a loaded configuration.
//
// # Safety
// `config` must be live and `seeds` must point to `n_seeds` values.
enum MetatsStatus metats_config_set_scale(struct MetatsConfig *config,
                                          uintptr_t m,
                                          uintptr_t n,
                                          const uint64_t *seeds,
                                          uintptr_t n_seeds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METATS_H */
