#include <math.h>
#include <stdio.h>
#include <string.h>

#include "pdnet.h"

#define CHECK(cond)                                                      \
    do {                                                                 \
        if (!(cond)) {                                                   \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, \
                    pdnet_last_error());                                 \
            return 1;                                                    \
        }                                                                \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke OUT_DIR\n");
        return 2;
    }
    double grid[3 * 64];
    for (int i = 0; i < 64; i++) {
        grid[3 * i + 0] = (double)(i % 8);
        grid[3 * i + 1] = (double)(i / 8);
        grid[3 * i + 2] = 0.0;
    }

    size_t picked[4];
    CHECK(pdnet_farthest_point_sample(grid, 64, 4, 0, picked) == PDNET_STATUS_OK);
    CHECK(picked[0] == 0 && picked[1] == 63);

    size_t idx[2];
    double dist[2];
    double query[3] = {0.1, 0.0, 0.0};
    CHECK(pdnet_knn(query, 1, grid, 64, 2, idx, dist) == PDNET_STATUS_OK);
    CHECK(idx[0] == 0 && idx[1] == 1 && fabs(dist[0] - 0.1) < 1e-12);

    PdnetCloud *cloud = NULL;
    CHECK(pdnet_cloud_new(grid, 64, &cloud) == PDNET_STATUS_OK);
    CHECK(pdnet_cloud_len(cloud) == 64);
    CHECK(pdnet_cloud_estimate_normals(cloud, 8) == PDNET_STATUS_OK);
    double normals[3 * 64];
    CHECK(pdnet_cloud_normals(cloud, normals, 3 * 64) == PDNET_STATUS_OK);
    CHECK(fabs(fabs(normals[2]) - 1.0) < 1e-12);

    char path[4096];
    snprintf(path, sizeof path, "%s/grid.pdc", argv[1]);
    CHECK(pdnet_cloud_write(cloud, path) == PDNET_STATUS_OK);
    PdnetCloud *back = NULL;
    CHECK(pdnet_cloud_read(path, &back) == PDNET_STATUS_OK);
    double xyz[3 * 64];
    CHECK(pdnet_cloud_positions(back, xyz, 3 * 64) == PDNET_STATUS_OK);
    CHECK(memcmp(xyz, grid, sizeof grid) == 0);

    CHECK(pdnet_cloud_positions(back, xyz, 3) == PDNET_STATUS_BUFFER_TOO_SMALL);
    CHECK(strstr(pdnet_last_error(), "needs 192") != NULL);
    CHECK(pdnet_cloud_read("/nonexistent/x.pdc", &back) == PDNET_STATUS_IO);

    pdnet_cloud_free(back);
    pdnet_cloud_free(cloud);
    pdnet_cloud_free(NULL);
    printf("pdnet %s ok\n", pdnet_version());
    return 0;
}
