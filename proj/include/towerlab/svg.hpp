#pragma once

#include <string>
#include <vector>

namespace towerlab {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Standalone SVG line chart. With log_y, non-positive values are dropped.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_y);

}  // namespace towerlab
