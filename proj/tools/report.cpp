#include "report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pbody::report {

namespace {

constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

// Roughly five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi)
{
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> out;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
    return out;
}

}  // namespace

std::string fmt(double v, int precision)
{
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string to_svg(const LinePlot& plot)
{
    constexpr double W = 640, H = 420, left = 70, right = 160, top = 40, bottom = 55;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : plot.series) {
        for (const auto& [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1.0;
    y0 = std::min(y0, 0.0);
    if (y1 <= y0) y1 = y0 + 1.0;
    y1 += 0.05 * (y1 - y0);

    const double pw = W - left - right;
    const double ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(plot.title)
      << "</text>\n";
    o << "<g stroke=\"#ddd\">\n";
    for (double t : ticks(y0, y1)) {
        o << "<line x1=\"" << fmt(left, 1) << "\" y1=\"" << fmt(py(t), 1) << "\" x2=\"" << fmt(left + pw, 1)
          << "\" y2=\"" << fmt(py(t), 1) << "\"/>\n";
    }
    o << "</g>\n";
    o << "<g stroke=\"black\">\n<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw
      << "\" y2=\"" << top + ph << "\"/>\n<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + ph << "\"/>\n</g>\n";
    for (double t : ticks(x0, x1)) {
        o << "<text x=\"" << fmt(px(t), 1) << "\" y=\"" << fmt(top + ph + 16, 1) << "\" text-anchor=\"middle\">"
          << fmt(t, std::abs(t - std::round(t)) < 1e-9 ? 0 : 2) << "</text>\n";
    }
    for (double t : ticks(y0, y1)) {
        o << "<text x=\"" << fmt(left - 6, 1) << "\" y=\"" << fmt(py(t) + 4, 1) << "\" text-anchor=\"end\">"
          << fmt(t, std::abs(t - std::round(t)) < 1e-9 ? 0 : 2) << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\">"
      << escape(plot.x_label) << "</text>\n";
    o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(plot.y_label) << "</text>\n";

    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const auto& s = plot.series[k];
        const char* color = kColors[k % kColors.size()];
        if (!s.points.empty()) {
            o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.points.size(); ++i) {
                o << (i ? " " : "") << fmt(px(s.points[i].first), 2) << "," << fmt(py(s.points[i].second), 2);
            }
            o << "\"/>\n";
            if (plot.markers) {
                for (const auto& [x, y] : s.points) {
                    o << "<circle cx=\"" << fmt(px(x), 2) << "\" cy=\"" << fmt(py(y), 2) << "\" r=\"3.5\" fill=\""
                      << color << "\"/>\n";
                }
            }
        }
        const double ly = top + 14 + 20.0 * k;
        o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

std::string to_ply(const VertexMesh& mesh, const Eigen::VectorXd& scalar, const std::string& scalar_name)
{
    if (scalar.size() != mesh.vertices.rows()) throw std::invalid_argument("scalar field size does not match mesh");
    const double hi = scalar.size() ? scalar.maxCoeff() : 0.0;
    std::ostringstream o;
    o << "ply\nformat ascii 1.0\n"
      << "element vertex " << mesh.vertices.rows() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float " << scalar_name << "\n"
      << "element face " << mesh.faces.rows() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
    for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) {
        // Blue (low) to red (high).
        const double t = hi > 0.0 ? scalar[v] / hi : 0.0;
        const int r = static_cast<int>(std::lround(255.0 * t));
        const int b = 255 - r;
        o << fmt(mesh.vertices(v, 0), 6) << " " << fmt(mesh.vertices(v, 1), 6) << " " << fmt(mesh.vertices(v, 2), 6)
          << " " << r << " 64 " << b << " " << fmt(scalar[v], 6) << "\n";
    }
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        o << "3 " << mesh.faces(f, 0) << " " << mesh.faces(f, 1) << " " << mesh.faces(f, 2) << "\n";
    }
    return o.str();
}

}  // namespace pbody::report
