#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "pbody/body_model.hpp"

// Image conventions: pixel (c, r) is column c, row r, with its centre at the
// integer coordinate (u, v) = (c, r). Rows grow with +y of the camera frame.

namespace pbody {

// Orthographic projection followed by scale s and translation (tx, ty), in
// normalized image units.
struct WeakPerspCamera {
    double s = 1.0;
    double tx = 0.0;
    double ty = 0.0;
};

template <class T>
std::array<T, 2> project_weak(const Vec3<T>& p, const T& s, const T& tx, const T& ty)
{
    return {s * p[0] + tx, s * p[1] + ty};
}

Points2 project_weak(const Points3& points, const WeakPerspCamera& cam);

struct BehindCamera : std::domain_error {
    using std::domain_error::domain_error;
};

struct PerspCamera {
    double focal = 300.0;  // pixels
    int width = 256;
    int height = 256;
    Eigen::Vector3d translation{0.0, -0.2, 2.5};  // meters, applied before projection

    // Throws std::invalid_argument unless focal > 0, translation z > 0 and the
    // image is non-empty.
    void validate() const;
};

// u = f (x + tx) / (z + tz) + W/2, v = f (y + ty) / (z + tz) + H/2.
// Throws BehindCamera if any point has z + tz <= 0.
Points2 project_persp(const Points3& points, const PerspCamera& cam);

inline bool in_frame(double u, double v, int width, int height)
{
    return u >= -0.5 && u < width - 0.5 && v >= -0.5 && v < height - 0.5;
}

// Nearest pixel centre, ties rounded up; in range whenever in_frame holds.
inline int nearest_pixel(double u) { return static_cast<int>(std::floor(u + 0.5)); }

// Calls visit(pixel_index, face) for every pixel centre inside every
// non-degenerate triangle. Edges are inclusive and winding is ignored.
void rasterize_triangles(const Points2& pixels, const Faces& faces, int width, int height,
                         const std::function<void(int pixel, int face)>& visit);

// Binary coverage mask, row-major H x W, values 0/1.
std::vector<std::uint8_t> rasterize_silhouette(const VertexMesh& mesh, const PerspCamera& cam);

inline constexpr double kHeatmapSigma = 4.0;

// Channel-major L x H x W. Visible channels are a Gaussian of width sigma
// centred on the joint's rounded pixel (peak exactly 1), with values below the
// smallest normal float stored as 0; invisible channels are zero.
std::vector<float> joints_to_heatmaps(const Points2& joints, std::span<const std::uint8_t> visibility, int width,
                                      int height, double sigma = kHeatmapSigma);

// omega_l = 0 iff confidence_l < t.
std::vector<std::uint8_t> threshold_detections(std::span<const double> confidences, double t);

// Network input: silhouette channel plus one heatmap channel per keypoint.
struct ProxyRepresentation {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> silhouette;  // H x W
    std::vector<float> heatmaps;           // L x H x W

    int num_keypoints() const
    {
        return width * height == 0 ? 0 : static_cast<int>(heatmaps.size() / (static_cast<std::size_t>(width) * height));
    }
};

}  // namespace pbody
