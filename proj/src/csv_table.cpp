#include "ecr/csv_table.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ecr/error.hpp"

namespace ecr {

std::string CsvTable::meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return v;
    return {};
}

bool CsvTable::has_meta(const std::string& key) const {
    for (const auto& kv : metadata)
        if (kv.first == key) return true;
    return false;
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void write_csv_table(const CsvTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
    for (const auto& [k, v] : table.metadata) out << "# " << k << '=' << v << '\n';
    for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
        out << '\n';
    }
    if (!out) fail(ErrorKind::io, "write to " + path + " failed");
}

CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path);
    CsvTable table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) fail(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": bad metadata line");
            table.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        if (!have_header) {
            while (std::getline(ss, cell, ',')) table.columns.push_back(cell);
            have_header = true;
            continue;
        }
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                fail(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": unparseable value '" + cell + "'");
            }
        }
        if (row.size() != table.columns.size())
            fail(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": wrong number of columns");
        table.rows.push_back(std::move(row));
    }
    if (!have_header) fail(ErrorKind::parse, path + ": missing header row");
    return table;
}

}  // namespace ecr
