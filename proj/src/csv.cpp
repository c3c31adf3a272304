#include "sae/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace sae::csv {

Table::Table(std::vector<std::string> header) : header_{std::move(header)} {}

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

Table Table::parse(std::istream &in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("CSV input has no header row");
    }
    Table table{split_line(line)};
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        auto fields = split_line(line);
        if (fields.size() != table.cols()) {
            throw std::invalid_argument(fmt::format("CSV line {} has {} fields, expected {}", line_no,
                                                    fields.size(), table.cols()));
        }
        table.rows_.push_back(std::move(fields));
    }
    return table;
}

Table Table::read(const std::filesystem::path &path) {
    std::ifstream in{path};
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    return parse(in);
}

namespace {

std::string quote_if_needed(const std::string &field) {
    if (field.find_first_of(",\"") == std::string::npos) {
        return field;
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream &out, const std::vector<std::string> &row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << quote_if_needed(row[i]);
    }
    out << '\n';
}

} // namespace

void Table::write(std::ostream &out) const {
    write_row(out, header_);
    for (const auto &row : rows_) {
        write_row(out, row);
    }
}

void Table::write(const std::filesystem::path &path) const {
    std::ofstream out{path};
    if (!out) {
        throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    }
    write(out);
}

bool Table::has_column(std::string_view name) const {
    for (const auto &h : header_) {
        if (h == name) {
            return true;
        }
    }
    return false;
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) {
            return i;
        }
    }
    throw std::invalid_argument(fmt::format("CSV is missing column '{}'", name));
}

double Table::number(std::size_t row, std::string_view name) const {
    const auto &text = cell(row, name);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument(
            fmt::format("row {}: column '{}' is not a number: '{}'", row + 1, name, text));
    }
    return value;
}

long long Table::integer(std::size_t row, std::string_view name) const {
    const auto &text = cell(row, name);
    long long value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument(
            fmt::format("row {}: column '{}' is not an integer: '{}'", row + 1, name, text));
    }
    return value;
}

std::optional<double> Table::optional_number(std::size_t row, std::string_view name) const {
    if (is_missing(cell(row, name))) {
        return std::nullopt;
    }
    return number(row, name);
}

void Table::add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) {
        throw std::invalid_argument(
            fmt::format("row has {} fields, table has {} columns", row.size(), header_.size()));
    }
    rows_.push_back(std::move(row));
}

bool is_missing(std::string_view cell) { return cell.empty() || cell == "NA"; }

std::string format_number(double value) { return fmt::format("{}", value); }

std::string format_optional(const std::optional<double> &value) {
    return value ? format_number(*value) : std::string{"NA"};
}

} // namespace sae::csv
