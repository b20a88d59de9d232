#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pebm/errors.hpp"
#include "pebm/tensor.hpp"

namespace pebm {

// An unordered set of 3-d points. Storage order is retained for I/O, but
// consumers must treat the set as unordered unless documented otherwise.
struct PointCloud {
    std::vector<std::array<double, 3>> points;

    PointCloud() = default;
    explicit PointCloud(std::vector<std::array<double, 3>> pts)
        : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }

    void validate() const {
        if (points.empty()) throw ContractError("point cloud must contain at least one point");
        for (const auto& p : points) {
            for (double v : p) {
                if (!std::isfinite(v)) {
                    throw ContractError("point cloud contains non-finite coordinate");
                }
            }
        }
    }
};

// Packs B clouds of equal size into a [B,M,3] tensor.
Tensor pack_clouds(std::span<const PointCloud> clouds);
inline Tensor pack_cloud(const PointCloud& cloud) {
    return pack_clouds(std::span<const PointCloud>(&cloud, 1));
}

// Splits a [B,M,3] tensor back into clouds.
std::vector<PointCloud> unpack_clouds(const Tensor& batch);
PointCloud unpack_cloud(const Tensor& batch, std::size_t index);

} // namespace pebm
