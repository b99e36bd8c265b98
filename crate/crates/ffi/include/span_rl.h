#ifndef SPAN_RL_H
#define SPAN_RL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every exported function.
typedef enum SpanRlStatus {
  SPAN_RL_STATUS_OK = 0,
  SPAN_RL_STATUS_NULL_POINTER = 1,
  SPAN_RL_STATUS_INVALID_ARGUMENT = 2,
  SPAN_RL_STATUS_DIMENSION = 3,
  SPAN_RL_STATUS_DOMAIN = 4,
  SPAN_RL_STATUS_PROTOCOL = 5,
  SPAN_RL_STATUS_IO = 6,
  SPAN_RL_STATUS_FORMAT = 7,
  SPAN_RL_STATUS_TRAINING_FAULT = 8,
  SPAN_RL_STATUS_INTERNAL = 9,
  SPAN_RL_STATUS_PANIC = 10,
} SpanRlStatus;

// A classic-control environment instance.
typedef struct SpanRlEnv SpanRlEnv;

// A SPAN or MLP network with its evaluation workspace.
typedef struct SpanRlNet SpanRlNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `len` bytes, into `buf`. Returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t span_rl_last_error(char *buf, uintptr_t len);

// Writes the `nelems + degree` clamped uniform B-spline basis values at
// `x ∈ [0, 1]` into `out`.
//
// # Safety
// `out` must point to `out_len` writable doubles.
enum SpanRlStatus span_rl_bspline_eval(uintptr_t degree,
                                       uintptr_t nelems,
                                       double x,
                                       double *out,
                                       uintptr_t out_len);

// Creates a freshly initialised SPAN network.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum SpanRlStatus span_rl_span_net_new(uintptr_t input_dim,
                                       uintptr_t output_dim,
                                       uintptr_t nmodes,
                                       uintptr_t nelems,
                                       uintptr_t degree,
                                       uint64_t seed,
                                       struct SpanRlNet **out);

// Loads the network stored under `role` (for example `actor`) in a
// checkpoint file.
//
// # Safety
// `path` and `role` must be NUL-terminated strings; `out` a valid slot.
enum SpanRlStatus span_rl_net_load(const char *path, const char *role, struct SpanRlNet **out);

// Releases a network. Null is ignored.
//
// # Safety
// `net` must come from this library and not be used afterwards.
void span_rl_net_free(struct SpanRlNet *net);

// Input width, output width and trainable parameter count.
//
// # Safety
// `net` must be a live handle; each output pointer may be null.
enum SpanRlStatus span_rl_net_shape(const struct SpanRlNet *net,
                                    uintptr_t *input_dim,
                                    uintptr_t *output_dim,
                                    uintptr_t *param_count);

// Evaluates the network at `input`.
//
// # Safety
// `net` must be a live handle not used concurrently; the buffers must hold
// the stated lengths.
enum SpanRlStatus span_rl_net_forward(struct SpanRlNet *net,
                                      const double *input,
                                      uintptr_t input_len,
                                      double *out,
                                      uintptr_t out_len);

// Creates an environment by name (`CartPole-v1`, `Acrobot-v1`,
// `Pendulum-v1`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` a valid slot.
enum SpanRlStatus span_rl_env_new(const char *name, struct SpanRlEnv **out);

// Releases an environment. Null is ignored.
//
// # Safety
// `env` must come from this library and not be used afterwards.
void span_rl_env_free(struct SpanRlEnv *env);

// Observation width and action description. `action_count` is the number
// of discrete actions, or 0 for continuous spaces, in which case
// `action_dim` and `action_bound` describe the box.
//
// # Safety
// `env` must be a live handle; each output pointer may be null.
enum SpanRlStatus span_rl_env_spec(const struct SpanRlEnv *env,
                                   uintptr_t *state_dim,
                                   uintptr_t *action_count,
                                   uintptr_t *action_dim,
                                   double *action_bound);

// Starts an episode and writes the first observation.
//
// # Safety
// `env` must be a live handle; `obs` must hold `obs_len` doubles.
enum SpanRlStatus span_rl_env_reset(struct SpanRlEnv *env,
                                    uint64_t seed,
                                    double *obs,
                                    uintptr_t obs_len);

// Advances one step. Discrete environments read the action index from
// `action[0]`, which must be a whole number.
//
// # Safety
// `env` must be a live handle; buffers must hold the stated lengths and
// the flag pointers must be valid.
enum SpanRlStatus span_rl_env_step(struct SpanRlEnv *env,
                                   const double *action,
                                   uintptr_t action_len,
                                   double *obs,
                                   uintptr_t obs_len,
                                   double *reward,
                                   bool *terminated,
                                   bool *truncated);

// Step of the first of five consecutive evaluations whose mean reaches
// `target`. `found` is set to false when no such window exists.
//
// # Safety
// `steps` and `means` must hold `len` values; `step` and `found` must be
// valid.
enum SpanRlStatus span_rl_sustained_solve_step(const uint64_t *steps,
                                               const double *means,
                                               uintptr_t len,
                                               double target,
                                               uint64_t *step,
                                               bool *found);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPAN_RL_H */
