#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sae::csv {

/// In-memory CSV table: a header row plus string cells. Quoted fields with
/// embedded commas or doubled quotes are supported; embedded newlines are not.
class Table {
  public:
    Table() = default;
    explicit Table(std::vector<std::string> header);

    static Table parse(std::istream &in);
    static Table read(const std::filesystem::path &path);

    void write(std::ostream &out) const;
    void write(const std::filesystem::path &path) const;

    const std::vector<std::string> &header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    std::size_t cols() const { return header_.size(); }

    bool has_column(std::string_view name) const;
    /// Index of a column; throws std::invalid_argument naming the column if absent.
    std::size_t column(std::string_view name) const;

    const std::string &cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
    const std::string &cell(std::size_t row, std::string_view name) const {
        return rows_[row][column(name)];
    }

    double number(std::size_t row, std::string_view name) const;
    long long integer(std::size_t row, std::string_view name) const;
    /// Empty or "NA" cells map to std::nullopt.
    std::optional<double> optional_number(std::size_t row, std::string_view name) const;

    void add_row(std::vector<std::string> row);

  private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

std::vector<std::string> split_line(std::string_view line);

bool is_missing(std::string_view cell);

/// Shortest decimal text that round-trips the value exactly.
std::string format_number(double value);
std::string format_optional(const std::optional<double> &value);

} // namespace sae::csv
