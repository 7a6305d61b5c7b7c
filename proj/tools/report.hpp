#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pbody/body_model.hpp"

namespace pbody::report {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    bool markers = false;
};

// Static SVG line chart with axes, ticks and a legend.
std::string to_svg(const LinePlot& plot);

void write_text(const std::string& path, const std::string& text);

// ASCII PLY with per-vertex colour and a scalar property.
std::string to_ply(const VertexMesh& mesh, const Eigen::VectorXd& scalar, const std::string& scalar_name);

// Fixed-format number for reports.
std::string fmt(double v, int precision = 4);

}  // namespace pbody::report
