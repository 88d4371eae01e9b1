#include <stdio.h>
#include <string.h>

#include "sins_align.h"

static int fail(const char *what) {
    char msg[512];
    sa_last_error(msg, sizeof msg);
    fprintf(stderr, "%s: %s\n", what, msg);
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        return 2;
    }
    SaDataset *data = NULL;
    SaConfig *config = NULL;
    SaReport *report = NULL;
    if (sa_simulate(argv[1], 7, &data) != SA_STATUS_OK) {
        return fail("simulate");
    }
    if (sa_config_load(argv[2], &config) != SA_STATUS_OK) {
        return fail("config");
    }
    if (sa_align(data, config, NULL, &report) != SA_STATUS_OK) {
        return fail("align");
    }
    double err[3];
    if (sa_report_final_error_arcmin(report, err) != SA_STATUS_OK) {
        return fail("error");
    }
    printf("%s %zu %zu %zu %.6f %.6f %.6f\n", sa_version(), sa_dataset_imu_len(data),
           sa_dataset_gnss_len(data), sa_report_pass_count(report), err[0], err[1], err[2]);
    if (sa_config_load("/nonexistent.toml", &config) != SA_STATUS_INGESTION) {
        return 1;
    }
    size_t need = sa_last_error(NULL, 0);
    if (need < 2 || need > 4096) {
        return 1;
    }
    sa_report_free(report);
    sa_config_free(config);
    sa_dataset_free(data);
    return 0;
}
