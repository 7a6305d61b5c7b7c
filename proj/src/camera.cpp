#include "pbody/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pbody {

namespace {
constexpr double kFloatMin = std::numeric_limits<float>::min();
}

Points2 project_weak(const Points3& points, const WeakPerspCamera& cam)
{
    Points2 out(points.rows(), 2);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        out(i, 0) = cam.s * points(i, 0) + cam.tx;
        out(i, 1) = cam.s * points(i, 1) + cam.ty;
    }
    return out;
}

void PerspCamera::validate() const
{
    if (!(focal > 0.0)) throw std::invalid_argument("camera focal length must be positive");
    if (!(translation.z() > 0.0)) throw std::invalid_argument("camera translation z must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
}

Points2 project_persp(const Points3& points, const PerspCamera& cam)
{
    cam.validate();
    Points2 out(points.rows(), 2);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double z = points(i, 2) + cam.translation.z();
        if (!(z > 0.0)) {
            throw BehindCamera("point " + std::to_string(i) + " lies at or behind the camera plane");
        }
        out(i, 0) = cam.focal * (points(i, 0) + cam.translation.x()) / z + 0.5 * cam.width;
        out(i, 1) = cam.focal * (points(i, 1) + cam.translation.y()) / z + 0.5 * cam.height;
    }
    return out;
}

void rasterize_triangles(const Points2& pixels, const Faces& faces, int width, int height,
                         const std::function<void(int pixel, int face)>& visit)
{
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
        const double ax = pixels(faces(f, 0), 0), ay = pixels(faces(f, 0), 1);
        const double bx = pixels(faces(f, 1), 0), by = pixels(faces(f, 1), 1);
        const double cx = pixels(faces(f, 2), 0), cy = pixels(faces(f, 2), 1);
        const double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
        if (area == 0.0 || !std::isfinite(area)) continue;

        const int c0 = std::max(0, static_cast<int>(std::ceil(std::min({ax, bx, cx}))));
        const int c1 = std::min(width - 1, static_cast<int>(std::floor(std::max({ax, bx, cx}))));
        const int r0 = std::max(0, static_cast<int>(std::ceil(std::min({ay, by, cy}))));
        const int r1 = std::min(height - 1, static_cast<int>(std::floor(std::max({ay, by, cy}))));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double e0 = (bx - ax) * (r - ay) - (by - ay) * (c - ax);
                const double e1 = (cx - bx) * (r - by) - (cy - by) * (c - bx);
                const double e2 = (ax - cx) * (r - cy) - (ay - cy) * (c - cx);
                const bool inside = area > 0.0 ? (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
                                               : (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
                if (inside) visit(r * width + c, static_cast<int>(f));
            }
        }
    }
}

std::vector<std::uint8_t> rasterize_silhouette(const VertexMesh& mesh, const PerspCamera& cam)
{
    cam.validate();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(cam.width) * cam.height, 0);
    if (mesh.faces.rows() == 0) return mask;
    const Points2 px = project_persp(mesh.vertices, cam);
    rasterize_triangles(px, mesh.faces, cam.width, cam.height, [&](int p, int) { mask[p] = 1; });
    return mask;
}

std::vector<float> joints_to_heatmaps(const Points2& joints, std::span<const std::uint8_t> visibility, int width,
                                      int height, double sigma)
{
    if (visibility.size() != static_cast<std::size_t>(joints.rows())) {
        throw std::invalid_argument("visibility length does not match joint count");
    }
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    std::vector<float> out(plane * joints.rows(), 0.0f);
    std::vector<double> gx(width);
    std::vector<double> gy(height);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (Eigen::Index l = 0; l < joints.rows(); ++l) {
        if (!visibility[l]) continue;
        const double cx = nearest_pixel(joints(l, 0));
        const double cy = nearest_pixel(joints(l, 1));
        for (int c = 0; c < width; ++c) gx[c] = std::exp(-(c - cx) * (c - cx) * inv);
        for (int r = 0; r < height; ++r) gy[r] = std::exp(-(r - cy) * (r - cy) * inv);
        // Values below the smallest normal float are stored as exact zeros.
        float* ch = out.data() + plane * l;
        for (int r = 0; r < height; ++r) {
            if (gy[r] < kFloatMin) continue;
            for (int c = 0; c < width; ++c) {
                const double v = gy[r] * gx[c];
                if (v >= kFloatMin) ch[r * width + c] = static_cast<float>(v);
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> threshold_detections(std::span<const double> confidences, double t)
{
    std::vector<std::uint8_t> omega(confidences.size());
    for (std::size_t l = 0; l < confidences.size(); ++l) omega[l] = confidences[l] < t ? 0 : 1;
    return omega;
}

}  // namespace pbody
