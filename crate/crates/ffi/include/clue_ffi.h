#ifndef CLUE_FFI_H
#define CLUE_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum ClueStatus {
  CLUE_STATUS_OK = 0,
  CLUE_STATUS_NULL_ARGUMENT = 1,
  CLUE_STATUS_INVALID_UTF8 = 2,
  CLUE_STATUS_IO = 3,
  CLUE_STATUS_INVALID_INPUT = 4,
  // The text does not occur in the corpus.
  CLUE_STATUS_NOT_FOUND = 5,
  // The text occurs in more than one document.
  CLUE_STATUS_AMBIGUOUS = 6,
  CLUE_STATUS_INTERNAL = 7,
} ClueStatus;

// A knowledge base with its index, plus a lazily trained n-gram scorer.
typedef struct ClueIndexHandle ClueIndexHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from this thread.
const char *clue_last_error(void);

// Builds an index from a JSON-lines corpus with the default tokenizer. When
// `save_path` is not null the bundle is also written there.
//
// # Safety
// String arguments are null or nul-terminated; `out` is writable.
enum ClueStatus clue_index_build(const char *corpus_path,
                                 const char *save_path,
                                 struct ClueIndexHandle **out);

// Opens a bundle written by `clue build-index` or [`clue_index_build`].
//
// # Safety
// `path` is null or nul-terminated; `out` is writable.
enum ClueStatus clue_index_open(const char *path, struct ClueIndexHandle **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` is null or came from this library and was not freed before.
void clue_index_free(struct ClueIndexHandle *handle);

// Number of documents in the index.
//
// # Safety
// `handle` is a live handle; `out` is writable.
enum ClueStatus clue_index_doc_count(const struct ClueIndexHandle *handle, uintptr_t *out);

// Content hash of the index bundle as a nul-terminated hex string owned by
// the caller.
//
// # Safety
// `handle` is a live handle; `out` is writable.
enum ClueStatus clue_index_hash(const struct ClueIndexHandle *handle, char **out);

// Occurrences of `text`, tokenized like the corpus, across all documents.
//
// # Safety
// `handle` is a live handle; `text` is nul-terminated; `out` is writable.
enum ClueStatus clue_index_count(const struct ClueIndexHandle *handle,
                                 const char *text,
                                 uintptr_t *out);

// Resolves a clue to the one document containing it. Returns `NotFound`
// or `Ambiguous` when the clue does not identify a single document.
//
// # Safety
// `handle` is a live handle; `text` is nul-terminated; `out` is writable.
enum ClueStatus clue_index_lookup(const struct ClueIndexHandle *handle,
                                  const char *text,
                                  uint32_t *out);

// Retrieves documents for `query` with the n-gram scorer. `config_toml` is
// null for defaults or a run configuration in TOML; its `decode` and
// `scorer.ngram` sections apply. On success `out_json` receives
// `{"query_id", "ranked": [{"doc_id", "score", "clue_text"}], "diagnostics"}`.
//
// # Safety
// `handle` is a live handle; strings are null or nul-terminated;
// `out_json` is writable.
enum ClueStatus clue_retrieve(const struct ClueIndexHandle *handle,
                              const char *query,
                              const char *config_toml,
                              char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or came from this library and was not freed before.
void clue_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLUE_FFI_H */
