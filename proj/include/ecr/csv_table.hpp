#pragma once

// Plain-text table format shared by every numeric output: `# key=value`
// comment lines carrying parameters, one header row, then comma-separated
// rows with 17 significant digits.

#include <string>
#include <utility>
#include <vector>

namespace ecr {

using Metadata = std::vector<std::pair<std::string, std::string>>;

struct CsvTable {
    Metadata metadata;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::string meta(const std::string& key) const;  // empty when absent
    bool has_meta(const std::string& key) const;
};

/// printf("%.17g").
std::string format_double(double value);

void write_csv_table(const CsvTable& table, const std::string& path);
CsvTable read_csv_table(const std::string& path);

}  // namespace ecr
