#ifndef LPMFORGE_H
#define LPMFORGE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LpmfStatus {
  LPMF_STATUS_OK = 0,
  LPMF_STATUS_NULL_POINTER = 1,
  LPMF_STATUS_INVALID_ARGUMENT = 2,
  LPMF_STATUS_MALFORMED = 3,
  LPMF_STATUS_OUT_OF_RANGE = 4,
  LPMF_STATUS_MISSING_CONFIG = 5,
  LPMF_STATUS_SLOT_OVERFLOW = 6,
  LPMF_STATUS_ENCODING = 7,
  LPMF_STATUS_PANIC = 99,
} LpmfStatus;

typedef enum LpmfSectionKind {
  LPMF_SECTION_KIND_PATCHRAM0 = 0,
  LPMF_SECTION_KIND_PATCHRAM1 = 1,
  LPMF_SECTION_KIND_CONFIG_DATA = 2,
  LPMF_SECTION_KIND_UNKNOWN = 3,
} LpmfSectionKind;

typedef enum LpmfMode {
  LPMF_MODE_USER_SHUTDOWN = 0,
  LPMF_MODE_POWER_RESERVE = 1,
} LpmfMode;

typedef enum LpmfCaptureFormat {
  LPMF_CAPTURE_FORMAT_JSONL = 0,
  LPMF_CAPTURE_FORMAT_CSV = 1,
} LpmfCaptureFormat;

/**
 * Opaque patch image.
 */
typedef struct LpmfPatchImage LpmfPatchImage;

/**
 * Opaque rotation schedule.
 */
typedef struct LpmfSchedule LpmfSchedule;

/**
 * Heap bytes owned by the caller.
 */
typedef struct LpmfBuffer {
  uint8_t *data;
  size_t len;
} LpmfBuffer;

typedef struct LpmfSectionInfo {
  enum LpmfSectionKind kind;
  uint32_t type_code;
  uint32_t size;
  uint32_t mapped_to;
  uint32_t file_offset;
  uint32_t checksum;
} LpmfSectionInfo;

typedef struct LpmfPatchEntry {
  uint32_t rom_address;
  uint8_t new_word[4];
  uint8_t trailer[5];
} LpmfPatchEntry;

typedef struct LpmfScheduleParams {
  uint32_t short_key_count;
  /**
   * Seed for generated keys.
   */
  uint64_t seed;
  uint32_t interval_minutes;
  enum LpmfMode mode;
  uint32_t power_reserve_cap_minutes;
} LpmfScheduleParams;

typedef struct LpmfWindow {
  uint64_t start_s;
  uint64_t end_s;
  uint8_t mac[6];
  uint8_t adv_data[32];
} LpmfWindow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL.
 */
const char *lpmf_last_error(void);

/**
 * # Safety
 * `buf` must be NULL or a buffer produced by this library, freed once.
 */
void lpmf_buffer_free(struct LpmfBuffer *buf);

/**
 * # Safety
 * `s` must be NULL or a string produced by this library, freed once.
 */
void lpmf_string_free(char *s);

/**
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum LpmfStatus lpmf_image_parse(const uint8_t *data, size_t len, struct LpmfPatchImage **out);

/**
 * # Safety
 * `img` must be NULL or a handle from [`lpmf_image_parse`], freed once.
 */
void lpmf_image_free(struct LpmfPatchImage *img);

/**
 * # Safety
 * `img` must be a live handle; `out` must be writable.
 */
enum LpmfStatus lpmf_image_serialize(const struct LpmfPatchImage *img, struct LpmfBuffer *out);

/**
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t lpmf_image_section_count(const struct LpmfPatchImage *img);

/**
 * # Safety
 * `img` must be a live handle; `out` must be writable.
 */
enum LpmfStatus lpmf_image_section_info(const struct LpmfPatchImage *img,
                                        size_t index,
                                        struct LpmfSectionInfo *out);

/**
 * Counts stored checksums (sections and global) that do not match.
 *
 * # Safety
 * `img` must be a live handle; `mismatches` must be writable.
 */
enum LpmfStatus lpmf_image_verify(const struct LpmfPatchImage *img, size_t *mismatches);

/**
 * Rewrites every checksum in place.
 *
 * # Safety
 * `img` must be a live handle.
 */
enum LpmfStatus lpmf_image_recompute(struct LpmfPatchImage *img);

/**
 * # Safety
 * `img` must be a live handle; `data` must point to `len` readable bytes.
 */
enum LpmfStatus lpmf_image_replace_bytes(struct LpmfPatchImage *img,
                                         size_t section,
                                         size_t offset,
                                         const uint8_t *data,
                                         size_t len);

/**
 * Replaces bytes at a chip address inside whichever section maps it.
 *
 * # Safety
 * `img` must be a live handle; `data` must point to `len` readable bytes.
 */
enum LpmfStatus lpmf_image_replace_at(struct LpmfPatchImage *img,
                                      uint32_t address,
                                      const uint8_t *data,
                                      size_t len);

/**
 * # Safety
 * `img` must be a live handle; `count` must be writable.
 */
enum LpmfStatus lpmf_image_entry_count(const struct LpmfPatchImage *img, size_t *count);

/**
 * # Safety
 * `img` must be a live handle; `out` must be writable.
 */
enum LpmfStatus lpmf_image_entry(const struct LpmfPatchImage *img,
                                 size_t index,
                                 struct LpmfPatchEntry *out);

/**
 * Adds a patch entry, or replaces the word of the entry at the same address.
 *
 * # Safety
 * `img` must be a live handle; `word` must point to 4 readable bytes.
 */
enum LpmfStatus lpmf_image_upsert_entry(struct LpmfPatchImage *img,
                                        uint32_t rom_address,
                                        const uint8_t *word);

/**
 * The default: 96 keys, 15-minute rotation, user shutdown, 300-minute cap.
 */
struct LpmfScheduleParams lpmf_schedule_params_default(void);

/**
 * # Safety
 * `params` must be readable; `out` must be writable.
 */
enum LpmfStatus lpmf_schedule_new(const struct LpmfScheduleParams *params,
                                  struct LpmfSchedule **out);

/**
 * # Safety
 * `s` must be NULL or a handle from [`lpmf_schedule_new`], freed once.
 */
void lpmf_schedule_free(struct LpmfSchedule *s);

/**
 * # Safety
 * `s` must be NULL or a live handle.
 */
size_t lpmf_schedule_window_count(const struct LpmfSchedule *s);

/**
 * # Safety
 * `s` must be NULL or a live handle.
 */
uint64_t lpmf_schedule_span_seconds(const struct LpmfSchedule *s);

/**
 * # Safety
 * `s` must be a live handle; `out` must be writable.
 */
enum LpmfStatus lpmf_schedule_window(const struct LpmfSchedule *s,
                                     size_t index,
                                     struct LpmfWindow *out);

/**
 * Full LPM configuration sequence as a `.hcd` byte stream.
 *
 * # Safety
 * `params` must be readable; `out` must be writable.
 */
enum LpmfStatus lpmf_findmy_emit_config(const struct LpmfScheduleParams *params,
                                        struct LpmfBuffer *out);

/**
 * Encodes a JSON array of LPM commands into a `.hcd` byte stream.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum LpmfStatus lpmf_lpm_encode_json(const char *json, struct LpmfBuffer *out);

/**
 * Decodes a `.hcd` byte stream of LPM commands into a JSON array.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum LpmfStatus lpmf_lpm_decode_json(const uint8_t *data, size_t len, char **out);

/**
 * Analyzes a capture and returns the rotation report as JSON. `nominal`
 * may be NULL; otherwise it receives whether the only verdict is nominal.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable;
 * `nominal` must be NULL or writable.
 */
enum LpmfStatus lpmf_capture_analyze(const uint8_t *data,
                                     size_t len,
                                     enum LpmfCaptureFormat format,
                                     double expected_total_s,
                                     char **out,
                                     bool *nominal);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LPMFORGE_H */
