#pragma once

// Shared primitives: error types, contract checks, a dense row-major matrix,
// counter-derived random streams, and number formatting.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <source_location>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>
#include <iostream>

namespace fairgp {

// Raised when a caller breaks a documented precondition.
class contract_violation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input file does not have the expected columns.
class schema_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A cell could not be parsed; carries its 1-based location.
class parse_error : public std::runtime_error {
public:
    parse_error(std::size_t row, std::size_t column, const std::string& what)
        : std::runtime_error("row " + std::to_string(row) + ", column " + std::to_string(column) + ": " + what)
        , row_(row)
        , column_(column)
    {
    }
    [[nodiscard]] auto row() const noexcept { return row_; }
    [[nodiscard]] auto column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

// Well-formed input that violates a domain rule (e.g. non-binary labels).
class validation_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void expect(bool condition, std::string_view message,
    std::source_location where = std::source_location::current())
{
    if (!condition) {
        throw contract_violation(std::string(message) + " (" + where.function_name() + ")");
    }
}

// --- warnings -------------------------------------------------------------

namespace detail {
    struct WarningState {
        std::mutex mutex;
        std::function<void(std::string_view)> sink;
    };
    inline auto warning_state() -> WarningState&
    {
        static WarningState state;
        return state;
    }
} // namespace detail

// Replaces the warning sink; an empty function restores the stderr default.
inline void set_warning_sink(std::function<void(std::string_view)> sink)
{
    auto& state = detail::warning_state();
    std::scoped_lock lock(state.mutex);
    state.sink = std::move(sink);
}

inline void warn(std::string_view message)
{
    auto& state = detail::warning_state();
    std::scoped_lock lock(state.mutex);
    if (state.sink) {
        state.sink(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

// --- matrix ---------------------------------------------------------------

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows)
        , cols_(cols)
        , data_(rows * cols, fill)
    {
    }
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows)
        , cols_(cols)
        , data_(std::move(data))
    {
        expect(data_.size() == rows_ * cols_, "matrix data size mismatch");
    }
    // Builds from nested rows; all rows must have equal length.
    static auto from_rows(const std::vector<std::vector<double>>& rows) -> Matrix
    {
        Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            expect(rows[i].size() == m.cols_, "ragged matrix rows");
            std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
        }
        return m;
    }

    [[nodiscard]] auto rows() const noexcept { return rows_; }
    [[nodiscard]] auto cols() const noexcept { return cols_; }
    [[nodiscard]] auto operator()(std::size_t r, std::size_t c) -> double& { return data_[r * cols_ + c]; }
    [[nodiscard]] auto operator()(std::size_t r, std::size_t c) const -> double { return data_[r * cols_ + c]; }
    [[nodiscard]] auto row(std::size_t r) -> std::span<double> { return { data_.data() + r * cols_, cols_ }; }
    [[nodiscard]] auto row(std::size_t r) const -> std::span<const double> { return { data_.data() + r * cols_, cols_ }; }
    [[nodiscard]] auto data() const noexcept -> const std::vector<double>& { return data_; }
    [[nodiscard]] auto column(std::size_t c) const -> std::vector<double>
    {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            out[r] = (*this)(r, c);
        }
        return out;
    }

    friend auto operator==(const Matrix&, const Matrix&) -> bool = default;

private:
    std::size_t rows_ { 0 };
    std::size_t cols_ { 0 };
    std::vector<double> data_;
};

// --- randomness -----------------------------------------------------------

using Rng = std::mt19937_64;

constexpr auto splitmix64(std::uint64_t x) noexcept -> std::uint64_t
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
}

// Independent stream keyed by (seed, a, b, c). Work items that draw from
// their own stream give the same result regardless of scheduling.
inline auto make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) -> Rng
{
    auto h = splitmix64(seed);
    h = splitmix64(h ^ splitmix64(a + 0x1234567ULL));
    h = splitmix64(h ^ splitmix64(b + 0x89abcdefULL));
    h = splitmix64(h ^ splitmix64(c + 0x2545f491ULL));
    return Rng { h };
}

// Unbiased integer in [0, n).
inline auto uniform_index(Rng& rng, std::size_t n) -> std::size_t
{
    expect(n > 0, "uniform_index over empty range");
    auto const bound = static_cast<std::uint64_t>(n);
    auto const threshold = (0 - bound) % bound;
    for (;;) {
        auto const r = rng();
        if (r >= threshold) {
            return static_cast<std::size_t>(r % bound);
        }
    }
}

// Uniform double in [0, 1) with 53 random bits.
inline auto uniform01(Rng& rng) -> double
{
    return static_cast<double>(rng() >> 11U) * 0x1.0p-53;
}

inline auto uniform_real(Rng& rng, double lo, double hi) -> double
{
    return lo + (hi - lo) * uniform01(rng);
}

template <typename T>
void shuffle(std::span<T> values, Rng& rng)
{
    for (std::size_t i = values.size(); i > 1; --i) {
        auto j = uniform_index(rng, i);
        std::swap(values[i - 1], values[j]);
    }
}

// --- parallelism ----------------------------------------------------------

// Runs fn(i) for i in [0, n) on up to `threads` workers with static
// interleaved assignment. fn must only write to slot-private state.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    threads = std::min(threads, n);
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        workers.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) {
                        fn(i);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// --- formatting -----------------------------------------------------------

// Shortest decimal text that round-trips to the same double.
inline auto format_double(double value) -> std::string
{
    if (std::isnan(value)) {
        return "nan";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    std::array<char, 64> buffer {};
    auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
    if (ec != std::errc {}) {
        throw std::runtime_error("failed to format double");
    }
    return { buffer.data(), ptr };
}

inline auto median(std::vector<double> values) -> double
{
    expect(!values.empty(), "median of empty vector");
    auto const n = values.size();
    auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    auto upper = *mid;
    if (n % 2 == 1) {
        return upper;
    }
    auto lower = *std::max_element(values.begin(), mid);
    return lower + (upper - lower) / 2.0;
}

} // namespace fairgp
