#pragma once

#include <string>
#include <vector>

#include "acnorm/tensor.hpp"

namespace acnorm {

// Dependency-free SVG emitters for the report artifacts.

// K x K matrix as a colored grid with a value scale.
void write_heatmap_svg(const std::string& path, const Tensor& matrix, const std::string& title);

// Grouped bars: one group per label, one bar per series.
void write_bars_svg(const std::string& path, const std::vector<std::string>& labels,
                    const std::vector<std::pair<std::string, std::vector<double>>>& series,
                    const std::string& title);

// Scatter with point labels and a free-text annotation (correlations).
void write_scatter_svg(const std::string& path, const std::vector<double>& xs,
                       const std::vector<double>& ys, const std::vector<std::string>& labels,
                       const std::string& x_label, const std::string& y_label,
                       const std::string& title, const std::string& annotation);

} // namespace acnorm
