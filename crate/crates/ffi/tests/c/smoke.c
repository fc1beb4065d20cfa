#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "telemetry_anomaly.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,       \
              ta_last_error_message());                                    \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  double d = ta_haversine_km(0.0, 0.0, 0.0, 180.0);
  CHECK(fabs(d - 20015.0868) < 1e-3);

  uint8_t truth[8] = {0, 0, 1, 1, 1, 1, 1, 1};
  double errors[8] = {0.9, 0.8, 0.1, 0.2, 0.15, 0.05, 0.3, 0.25};
  double auc = 0.0;
  CHECK(ta_roc_auc(errors, truth, 8, &auc) == TA_STATUS_OK);
  CHECK(auc == 1.0);

  TaThreshold t;
  CHECK(ta_select_threshold(errors, truth, 8, &t) == TA_STATUS_OK);
  CHECK(t.metrics.recall == 1.0);

  TaAutoencoder *ae = NULL;
  CHECK(ta_autoencoder_new(11, 128, 2, 1, &ae) == TA_STATUS_OK);
  CHECK(ta_autoencoder_parameter_count(ae) == 3597);

  double rows[4 * 11];
  for (int i = 0; i < 4 * 11; i++) rows[i] = (double)(i % 7) / 7.0;
  double loss = NAN;
  CHECK(ta_autoencoder_train(ae, rows, 4, 11, 1e-3, 2, 2, 9, &loss) == TA_STATUS_OK);
  CHECK(isfinite(loss));

  double scores[4];
  CHECK(ta_autoencoder_score(ae, rows, 4, 11, scores) == TA_STATUS_OK);
  CHECK(ta_autoencoder_score(ae, rows, 4, 3, scores) == TA_STATUS_INVALID_ARGUMENT);
  ta_autoencoder_free(ae);

  CHECK(ta_confusion(NULL, truth, 8, NULL) == TA_STATUS_NULL_POINTER);
  printf("ok %s\n", ta_version());
  return 0;
}
