#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace slamkit {

enum class ColumnKind : std::uint8_t { numeric, categorical };

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
};

/// Dense row-major table of doubles. Categorical columns hold non-negative
/// integer ids; numeric columns use NaN for missing.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(std::vector<ColumnSpec> columns) : columns_(std::move(columns)) {}

    static constexpr double missing = std::numeric_limits<double>::quiet_NaN();

    const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
    std::size_t num_columns() const noexcept { return columns_.size(); }
    std::size_t num_rows() const noexcept {
        return columns_.empty() ? 0 : values_.size() / columns_.size();
    }

    void add_row(std::span<const double> row) {
        if (row.size() != columns_.size()) throw std::invalid_argument("row width mismatch");
        values_.insert(values_.end(), row.begin(), row.end());
    }

    double operator()(std::size_t r, std::size_t c) const noexcept {
        return values_[r * columns_.size() + c];
    }

    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * columns_.size(), columns_.size()};
    }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(num_rows());
        for (std::size_t r = 0; r < out.size(); ++r) out[r] = (*this)(r, c);
        return out;
    }

private:
    std::vector<ColumnSpec> columns_;
    std::vector<double> values_;
};

}  // namespace slamkit
