#ifndef GCAS_H
#define GCAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcasMutation {
  GCAS_MUTATION_NONE = 0,
  GCAS_MUTATION_SKIP_HELP_COPY = 1,
  GCAS_MUTATION_ANNOUNCE_WITH_EQ = 2,
} GcasMutation;

typedef enum GcasStatus {
  GCAS_STATUS_OK = 0,
  GCAS_STATUS_NULL_POINTER = 1,
  GCAS_STATUS_INVALID_ARGUMENT = 2,
  GCAS_STATUS_UNKNOWN_TYPE = 3,
  GCAS_STATUS_UNKNOWN_OPERATION = 4,
  GCAS_STATUS_PROCESS_BUSY = 5,
  /**
   * A history was not linearizable or an exploration found a violation.
   */
  GCAS_STATUS_VIOLATION = 6,
  GCAS_STATUS_BUDGET_EXCEEDED = 7,
  GCAS_STATUS_IO = 8,
  GCAS_STATUS_BUFFER_TOO_SMALL = 9,
  GCAS_STATUS_INTERNAL = 10,
  /**
   * The object already has `max_processes` processes.
   */
  GCAS_STATUS_CAPACITY_EXHAUSTED = 11,
} GcasStatus;

typedef enum GcasValueKind {
  GCAS_VALUE_KIND_INT = 0,
  GCAS_VALUE_KIND_BOOL = 1,
  GCAS_VALUE_KIND_ACK = 2,
  GCAS_VALUE_KIND_EMPTY = 3,
  GCAS_VALUE_KIND_LIST = 4,
} GcasValueKind;

/**
 * A universal object of some built-in sequential type.
 */
typedef struct GcasObject GcasObject;

/**
 * One process of a [`GcasObject`]. Must be used by one thread at a time.
 */
typedef struct GcasProcess GcasProcess;

/**
 * A response. `int_value` holds the integer for `Int`, 0/1 for `Bool`, the
 * length for `List`, and 0 otherwise.
 */
typedef struct GcasValue {
  enum GcasValueKind kind;
  int64_t int_value;
} GcasValue;

typedef struct GcasExploreConfig {
  const char *type_name;
  uint32_t procs;
  uint32_t ops_per_proc;
  /**
   * 0 for exhaustive, otherwise the number of random schedules.
   */
  uint64_t random_samples;
  uint64_t seed;
  uint64_t max_steps;
  uint64_t budget;
  /**
   * Bit `i` set lets pid `i + 1` crash.
   */
  uint64_t crash_mask;
  enum GcasMutation mutation;
} GcasExploreConfig;

typedef struct GcasExploreSummary {
  uint64_t states_visited;
  uint64_t schedules_completed;
  uint64_t truncated;
  uint64_t violations;
  uint64_t progress_cycles;
  bool budget_exceeded;
} GcasExploreSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty if none.
 */
const char *gcas_last_error_message(void);

const char *gcas_version(void);

/**
 * Creates an object of built-in type `type_name` ("counter", "register" or
 * "stack") that at most `max_processes` processes may join.
 *
 * # Safety
 * `type_name` must be a NUL-terminated string; `out` must be writable.
 */
enum GcasStatus gcas_object_new(const char *type_name,
                                uint32_t max_processes,
                                struct GcasObject **out);

/**
 * Releases an object. Processes created from it stay valid.
 *
 * # Safety
 * `obj` must come from [`gcas_object_new`] and not be freed twice.
 */
void gcas_object_free(struct GcasObject *obj);

/**
 * Registers a new process with `obj`.
 *
 * # Safety
 * `obj` must be a live object; `out` must be writable.
 */
enum GcasStatus gcas_process_new(const struct GcasObject *obj, struct GcasProcess **out);

/**
 * # Safety
 * `proc_` must come from [`gcas_process_new`] and not be freed twice.
 */
void gcas_process_free(struct GcasProcess *proc_);

/**
 * The pid of a process, or 0 for a null handle.
 *
 * # Safety
 * `proc_` must be null or a live process.
 */
uint32_t gcas_process_pid(const struct GcasProcess *proc_);

/**
 * Runs operation `op_name(args[0..nargs])` to completion.
 *
 * # Safety
 * `proc_` must be a live process used by no other thread; `args` must point
 * to `nargs` integers (or be null when `nargs` is 0); `out` must be writable.
 */
enum GcasStatus gcas_do_op(struct GcasProcess *proc_,
                           const char *op_name,
                           const int64_t *args,
                           size_t nargs,
                           struct GcasValue *out);

/**
 * Writes the object's current state as NUL-terminated JSON into `buf`.
 * `needed` (if not null) receives the size required including the NUL.
 *
 * # Safety
 * `obj` must be live; `buf` must have room for `cap` bytes.
 */
enum GcasStatus gcas_object_state(const struct GcasObject *obj,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/**
 * Checks a JSONL history file for linearizability against `type_name`.
 * Returns `Ok` if linearizable, `Violation` if not.
 *
 * # Safety
 * `path` and `type_name` must be NUL-terminated strings.
 */
enum GcasStatus gcas_check_history_file(const char *path, const char *type_name);

/**
 * Runs the interleaving explorer. `out` is filled even when the result is
 * `Violation` or `BudgetExceeded`.
 *
 * # Safety
 * `cfg` must point to a valid config whose `mutation` is a declared
 * `GcasMutation` value; `out` must be writable.
 */
enum GcasStatus gcas_explore(const struct GcasExploreConfig *cfg, struct GcasExploreSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GCAS_H */
