/* C API of the SFPN detection library.
 *
 * All objects are opaque handles created and destroyed through this API.
 * Functions return sfpn_status; on failure sfpn_last_error() carries a
 * message for the calling thread. Strings returned through char** must be
 * released with sfpn_string_free().
 */
#ifndef SFPN_H
#define SFPN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined _WIN32
#define SFPN_API __declspec(dllexport)
#else
#define SFPN_API __attribute__((visibility("default")))
#endif

typedef enum sfpn_status {
  SFPN_OK = 0,
  SFPN_ERR_ARGUMENT = 2, /* bad arguments or contract violation */
  SFPN_ERR_DATA = 3,     /* malformed or missing input data */
  SFPN_ERR_NUMERIC = 4   /* non-finite values, divergence */
} sfpn_status;

typedef struct sfpn_model sfpn_model;
typedef struct sfpn_dataset sfpn_dataset;

/* Message for the last failing call on this thread; never NULL. */
SFPN_API const char* sfpn_last_error(void);

SFPN_API void sfpn_string_free(char* s);

/* ---- model ----
 * Config JSON keys: variant ("sfpn3"|"sfpn5"|"sfpn9"), input_size,
 * neck_channels, num_classes, seed, backbone_widths, sol_enabled.
 */
SFPN_API sfpn_status sfpn_model_create(const char* config_json,
                                       sfpn_model** out);
SFPN_API sfpn_status sfpn_model_create_from_file(const char* config_path,
                                                 sfpn_model** out);
SFPN_API void sfpn_model_free(sfpn_model* m);

SFPN_API sfpn_status sfpn_model_save(const sfpn_model* m, const char* path);
SFPN_API sfpn_status sfpn_model_load(sfpn_model* m, const char* path);

/* scope: "backbone", "neck", "head" or "total". */
SFPN_API sfpn_status sfpn_model_param_count(const sfpn_model* m,
                                            const char* scope, uint64_t* out);

/* Number of pyramid levels; and the number of levels the head runs on
 * (sol = 0 base mode, sol != 0 synthetic output layers). */
SFPN_API sfpn_status sfpn_model_level_count(const sfpn_model* m, int* out);
SFPN_API sfpn_status sfpn_model_head_level_count(const sfpn_model* m, int sol,
                                                 int* out);

/* ---- datasets ---- */
SFPN_API sfpn_status sfpn_dataset_generate(int num_images, int image_size,
                                           uint64_t seed, sfpn_dataset** out);
SFPN_API sfpn_status sfpn_dataset_open(const char* dir, sfpn_dataset** out);
SFPN_API sfpn_status sfpn_dataset_write(const sfpn_dataset* d, const char* dir);
SFPN_API sfpn_status sfpn_dataset_size(const sfpn_dataset* d, int* out);
SFPN_API void sfpn_dataset_free(sfpn_dataset* d);

/* ---- workflow ----
 * options_json accepts (all optional): epochs, batch_size, lr, lr_final,
 * momentum, seed, val_count, target_ap50, conf_threshold, nms_threshold,
 * flip_augment, resume_from, sol, iters, warmup, tag. Unknown keys are
 * rejected.
 */
SFPN_API sfpn_status sfpn_train(sfpn_model* m, const sfpn_dataset* d,
                                const char* options_json, const char* out_dir,
                                double* best_ap50);

/* Result JSON: AP, AP50, AP75, per-class APs and counts. */
SFPN_API sfpn_status sfpn_evaluate(const sfpn_model* m, const sfpn_dataset* d,
                                   const char* options_json,
                                   char** result_json);

/* Detections for one PPM image as JSON lines:
 * {"image_id":..,"class_id":..,"score":..,"bbox":[x1,y1,x2,y2]} */
SFPN_API sfpn_status sfpn_predict_ppm(const sfpn_model* m, const char* ppm_path,
                                      const char* options_json,
                                      char** detections_jsonl);

/* Latency report JSON: tag, input_size, iterations, mean/median/p95 ms, fps. */
SFPN_API sfpn_status sfpn_benchmark(const sfpn_model* m,
                                    const char* options_json,
                                    char** report_json);

/* Objectness confidence map of one head level, written as PGM P5 at the
 * input resolution. */
SFPN_API sfpn_status sfpn_export_confidence(const sfpn_model* m,
                                            const char* ppm_path,
                                            int level_index, int sol,
                                            const char* out_pgm_path);

#ifdef __cplusplus
}
#endif

#endif /* SFPN_H */
