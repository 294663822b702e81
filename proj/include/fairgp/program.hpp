#pragma once

// Symbolic feature programs: expression trees stored in prefix order, their
// protected evaluation, grow initialization, and variation operators.

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairgp/core.hpp"
#include "fairgp/data.hpp"

namespace fairgp {

enum class Op : std::uint8_t {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Relu,
    Logistic,
    Lt,
    Gt,
    And,
    Or,
    Not,
    Var,
    Const,
};

inline constexpr std::array kFunctionSet { Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Tanh, Op::Relu, Op::Logistic,
    Op::Lt, Op::Gt, Op::And, Op::Or, Op::Not };
inline constexpr std::array kUnaryOps { Op::Tanh, Op::Relu, Op::Logistic, Op::Not };
inline constexpr std::array kBinaryOps { Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Lt, Op::Gt, Op::And, Op::Or };

constexpr auto arity(Op op) noexcept -> int
{
    switch (op) {
    case Op::Var:
    case Op::Const:
        return 0;
    case Op::Tanh:
    case Op::Relu:
    case Op::Logistic:
    case Op::Not:
        return 1;
    default:
        return 2;
    }
}

constexpr auto op_name(Op op) noexcept -> std::string_view
{
    switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Logistic: return "logistic";
    case Op::Lt: return "lt";
    case Op::Gt: return "gt";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Not: return "not";
    case Op::Var: return "x";
    case Op::Const: return "const";
    }
    return "?";
}

struct Node {
    Op op { Op::Const };
    std::uint32_t feature { 0 }; // Var only
    double value { 0.0 };        // Const only

    static constexpr auto variable(std::uint32_t index) noexcept -> Node { return { Op::Var, index, 0.0 }; }
    static constexpr auto constant(double v) noexcept -> Node { return { Op::Const, 0, v }; }
    static constexpr auto function(Op op) noexcept -> Node { return { op, 0, 0.0 }; }

    [[nodiscard]] constexpr auto is_terminal() const noexcept { return arity(op) == 0; }
    friend constexpr auto operator==(const Node&, const Node&) -> bool = default;
};

// Magnitude cap applied to every operator output so that no composition of
// operators can overflow.
inline constexpr double kValueBound = 1e150;
// Divisors smaller than this in magnitude make div return 1.
inline constexpr double kDivisionGuard = 1e-6;

class Program {
public:
    Program() = default;
    explicit Program(std::vector<Node> prefix)
        : nodes_(std::move(prefix))
    {
        expect(is_well_formed(nodes_), "malformed prefix program");
    }

    [[nodiscard]] auto nodes() const noexcept -> const std::vector<Node>& { return nodes_; }
    [[nodiscard]] auto size() const noexcept { return nodes_.size(); }
    [[nodiscard]] auto empty() const noexcept { return nodes_.empty(); }
    [[nodiscard]] auto operator[](std::size_t i) const -> const Node& { return nodes_[i]; }

    // One past the last node of the subtree rooted at `i`.
    [[nodiscard]] auto subtree_end(std::size_t i) const -> std::size_t
    {
        std::size_t pending = 1;
        while (pending > 0) {
            pending += static_cast<std::size_t>(arity(nodes_[i].op));
            --pending;
            ++i;
        }
        return i;
    }

    // 1-based depth of every node (root has depth 1).
    [[nodiscard]] auto node_depths() const -> std::vector<std::size_t>
    {
        std::vector<std::size_t> depth(nodes_.size());
        std::vector<std::pair<std::size_t, int>> stack; // (depth, children still expected)
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            depth[i] = stack.empty() ? 1 : stack.back().first + 1;
            if (!stack.empty() && --stack.back().second == 0) {
                stack.pop_back();
            }
            if (auto a = arity(nodes_[i].op); a > 0) {
                stack.emplace_back(depth[i], a);
            }
        }
        return depth;
    }

    [[nodiscard]] auto depth() const -> std::size_t
    {
        auto d = node_depths();
        return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
    }

    [[nodiscard]] auto max_feature() const -> std::optional<std::uint32_t>
    {
        std::optional<std::uint32_t> best;
        for (auto const& n : nodes_) {
            if (n.op == Op::Var && (!best || n.feature > *best)) {
                best = n.feature;
            }
        }
        return best;
    }

    [[nodiscard]] auto has_operator() const -> bool
    {
        return std::any_of(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.is_terminal(); });
    }

    // Copy with nodes [first, last) replaced by `replacement`.
    [[nodiscard]] auto splice(std::size_t first, std::size_t last, std::span<const Node> replacement) const -> Program
    {
        std::vector<Node> out;
        out.reserve(nodes_.size() - (last - first) + replacement.size());
        out.insert(out.end(), nodes_.begin(), nodes_.begin() + static_cast<std::ptrdiff_t>(first));
        out.insert(out.end(), replacement.begin(), replacement.end());
        out.insert(out.end(), nodes_.begin() + static_cast<std::ptrdiff_t>(last), nodes_.end());
        return Program(std::move(out));
    }

    [[nodiscard]] auto subtree(std::size_t i) const -> std::span<const Node>
    {
        return { nodes_.data() + i, subtree_end(i) - i };
    }

    // Prefix notation, e.g. "relu(sub(x0,x1))".
    [[nodiscard]] auto to_string() const -> std::string
    {
        std::string out;
        if (!nodes_.empty()) {
            write(out, 0);
        }
        return out;
    }

    static auto parse(std::string_view text) -> Program;

    friend auto operator==(const Program&, const Program&) -> bool = default;

private:
    static auto is_well_formed(const std::vector<Node>& nodes) -> bool
    {
        if (nodes.empty()) {
            return false;
        }
        std::size_t pending = 1;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (pending == 0) {
                return false;
            }
            pending = pending - 1 + static_cast<std::size_t>(arity(nodes[i].op));
        }
        return pending == 0;
    }

    auto write(std::string& out, std::size_t i) const -> std::size_t
    {
        auto const& n = nodes_[i];
        if (n.op == Op::Var) {
            out += 'x';
            out += std::to_string(n.feature);
            return i + 1;
        }
        if (n.op == Op::Const) {
            out += format_double(n.value);
            return i + 1;
        }
        out += op_name(n.op);
        out += '(';
        auto next = i + 1;
        for (int c = 0; c < arity(n.op); ++c) {
            if (c > 0) {
                out += ',';
            }
            next = write(out, next);
        }
        out += ')';
        return next;
    }

    std::vector<Node> nodes_;
};

namespace detail {
    class ProgramParser {
    public:
        explicit ProgramParser(std::string_view text)
            : text_(text)
        {
        }

        auto parse() -> std::vector<Node>
        {
            std::vector<Node> nodes;
            parse_node(nodes);
            skip_space();
            if (pos_ != text_.size()) {
                fail("trailing characters");
            }
            return nodes;
        }

    private:
        [[noreturn]] void fail(const std::string& why) const
        {
            throw std::invalid_argument("cannot parse program '" + std::string(text_) + "' at offset "
                + std::to_string(pos_) + ": " + why);
        }

        void skip_space()
        {
            while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])) != 0) {
                ++pos_;
            }
        }

        void consume(char c)
        {
            skip_space();
            if (pos_ >= text_.size() || text_[pos_] != c) {
                fail(std::string("expected '") + c + "'");
            }
            ++pos_;
        }

        void parse_node(std::vector<Node>& out)
        {
            skip_space();
            if (pos_ >= text_.size()) {
                fail("unexpected end");
            }
            auto start = pos_;
            char c = text_[pos_];
            if (std::isalpha(static_cast<unsigned char>(c)) != 0) {
                while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_])) != 0) {
                    ++pos_;
                }
                auto word = text_.substr(start, pos_ - start);
                if (word.size() > 1 && word[0] == 'x'
                    && std::all_of(word.begin() + 1, word.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)) != 0; })) {
                    std::uint32_t index {};
                    std::from_chars(word.data() + 1, word.data() + word.size(), index);
                    out.push_back(Node::variable(index));
                    return;
                }
                for (auto op : kFunctionSet) {
                    if (op_name(op) == word) {
                        out.push_back(Node::function(op));
                        consume('(');
                        for (int a = 0; a < arity(op); ++a) {
                            if (a > 0) {
                                consume(',');
                            }
                            parse_node(out);
                        }
                        consume(')');
                        return;
                    }
                }
                fail("unknown symbol '" + std::string(word) + "'");
            }
            while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) != 0
                       || text_[pos_] == '.' || text_[pos_] == '-' || text_[pos_] == '+')) {
                ++pos_;
            }
            auto v = parse_number(text_.substr(start, pos_ - start));
            if (!v) {
                fail("bad constant");
            }
            out.push_back(Node::constant(*v));
        }

        std::string_view text_;
        std::size_t pos_ { 0 };
    };
} // namespace detail

inline auto Program::parse(std::string_view text) -> Program
{
    return Program(detail::ProgramParser(text).parse());
}

// --- evaluation -----------------------------------------------------------

namespace detail {
    inline auto bounded(double v) noexcept -> double
    {
        return std::clamp(v, -kValueBound, kValueBound);
    }
    inline auto truthy(double v) noexcept -> bool { return v > 0.5; }

    inline auto apply_unary(Op op, double a) noexcept -> double
    {
        switch (op) {
        case Op::Tanh: return std::tanh(a);
        case Op::Relu: return a > 0.0 ? a : 0.0;
        case Op::Logistic: return 1.0 / (1.0 + std::exp(-a));
        case Op::Not: return truthy(a) ? 0.0 : 1.0;
        default: return 0.0;
        }
    }

    inline auto apply_binary(Op op, double a, double b) noexcept -> double
    {
        switch (op) {
        case Op::Add: return bounded(a + b);
        case Op::Sub: return bounded(a - b);
        case Op::Mul: return bounded(a * b);
        case Op::Div: return std::abs(b) < kDivisionGuard ? 1.0 : bounded(a / b);
        case Op::Lt: return a < b ? 1.0 : 0.0;
        case Op::Gt: return a > b ? 1.0 : 0.0;
        case Op::And: return truthy(a) && truthy(b) ? 1.0 : 0.0;
        case Op::Or: return truthy(a) || truthy(b) ? 1.0 : 0.0;
        default: return 0.0;
        }
    }

    inline auto eval_node(const Program& prog, std::size_t i, const Matrix& x, std::vector<double>& out) -> std::size_t
    {
        auto const& n = prog[i];
        auto const m = x.rows();
        out.resize(m);
        switch (arity(n.op)) {
        case 0:
            if (n.op == Op::Var) {
                for (std::size_t r = 0; r < m; ++r) {
                    out[r] = x(r, n.feature);
                }
            } else {
                std::fill(out.begin(), out.end(), n.value);
            }
            return i + 1;
        case 1: {
            auto next = eval_node(prog, i + 1, x, out);
            for (auto& v : out) {
                v = apply_unary(n.op, v);
            }
            return next;
        }
        default: {
            auto next = eval_node(prog, i + 1, x, out);
            std::vector<double> rhs;
            next = eval_node(prog, next, x, rhs);
            for (std::size_t r = 0; r < m; ++r) {
                out[r] = apply_binary(n.op, out[r], rhs[r]);
            }
            return next;
        }
        }
    }
} // namespace detail

// Column-wise evaluation over every row of `x`.
inline auto eval_program(const Program& prog, const Matrix& x) -> std::vector<double>
{
    expect(!prog.empty(), "empty program");
    if (auto f = prog.max_feature(); f) {
        expect(*f < x.cols(), "program refers to a feature index beyond the data");
    }
    std::vector<double> out;
    detail::eval_node(prog, 0, x, out);
    return out;
}

inline auto eval_program(const Program& prog, const Dataset& ds) -> std::vector<double>
{
    return eval_program(prog, ds.features);
}

// --- construction and variation ----------------------------------------

namespace detail {
    inline auto random_terminal(std::size_t n_features, Rng& rng) -> Node
    {
        if (uniform_index(rng, 2) == 0) {
            return Node::variable(static_cast<std::uint32_t>(uniform_index(rng, n_features)));
        }
        return Node::constant(uniform_real(rng, -1.0, 1.0));
    }

    inline void grow(std::size_t n_features, std::size_t depth_left, Rng& rng, std::vector<Node>& out)
    {
        // Uniform over the primitive set: every function plus two terminal kinds.
        auto const choices = depth_left <= 1 ? std::size_t { 0 } : kFunctionSet.size();
        auto pick = uniform_index(rng, choices + 2);
        if (pick >= choices) {
            out.push_back(pick == choices
                    ? Node::variable(static_cast<std::uint32_t>(uniform_index(rng, n_features)))
                    : Node::constant(uniform_real(rng, -1.0, 1.0)));
            return;
        }
        auto op = kFunctionSet[pick];
        out.push_back(Node::function(op));
        for (int a = 0; a < arity(op); ++a) {
            grow(n_features, depth_left - 1, rng, out);
        }
    }
} // namespace detail

// Grow-method tree over features [0, n_features) with depth <= max_depth.
inline auto random_program(std::size_t n_features, std::size_t max_depth, Rng& rng) -> Program
{
    expect(n_features >= 1, "random_program needs at least one feature");
    expect(max_depth >= 1, "random_program needs max_depth >= 1");
    std::vector<Node> nodes;
    detail::grow(n_features, max_depth, rng, nodes);
    return Program(std::move(nodes));
}

enum class MutationKind : std::uint8_t { Point, SubtreeReplacement, SubtreeDeletion };

struct MutationRecord {
    MutationKind kind { MutationKind::Point };
    std::size_t node { 0 };
};

// Applies exactly one edit chosen uniformly among the applicable ones:
// point change (always), subtree replacement and subtree deletion (only
// when the program has an operator node).
inline auto mutate(const Program& prog, std::size_t n_features, std::size_t max_depth, Rng& rng,
    MutationRecord* record = nullptr) -> Program
{
    expect(!prog.empty(), "cannot mutate an empty program");
    std::vector<MutationKind> applicable { MutationKind::Point };
    if (prog.has_operator()) {
        applicable.push_back(MutationKind::SubtreeReplacement);
        applicable.push_back(MutationKind::SubtreeDeletion);
    }
    auto kind = applicable[uniform_index(rng, applicable.size())];
    std::size_t site = 0;
    Program out;
    switch (kind) {
    case MutationKind::Point: {
        site = uniform_index(rng, prog.size());
        auto node = prog[site];
        if (node.is_terminal()) {
            auto replacement = node;
            for (int tries = 0; tries < 16 && replacement == node; ++tries) {
                replacement = detail::random_terminal(n_features, rng);
            }
            node = replacement;
        } else if (arity(node.op) == 1) {
            auto op = node.op;
            while (op == node.op) {
                op = kUnaryOps[uniform_index(rng, kUnaryOps.size())];
            }
            node.op = op;
        } else {
            auto op = node.op;
            while (op == node.op) {
                op = kBinaryOps[uniform_index(rng, kBinaryOps.size())];
            }
            node.op = op;
        }
        std::array<Node, 1> one { node };
        out = prog.splice(site, site + 1, one);
        break;
    }
    case MutationKind::SubtreeReplacement: {
        site = uniform_index(rng, prog.size());
        auto site_depth = prog.node_depths()[site];
        auto budget = max_depth >= site_depth ? max_depth - site_depth + 1 : 1;
        auto fresh = random_program(n_features, budget, rng);
        out = prog.splice(site, prog.subtree_end(site), fresh.nodes());
        break;
    }
    case MutationKind::SubtreeDeletion: {
        std::vector<std::size_t> operators;
        for (std::size_t i = 0; i < prog.size(); ++i) {
            if (!prog[i].is_terminal()) {
                operators.push_back(i);
            }
        }
        site = operators[uniform_index(rng, operators.size())];
        // Hoist one of the operator's children into its place.
        auto child = site + 1;
        auto which = uniform_index(rng, static_cast<std::size_t>(arity(prog[site].op)));
        for (std::size_t c = 0; c < which; ++c) {
            child = prog.subtree_end(child);
        }
        auto kept = prog.subtree(child);
        std::vector<Node> copy(kept.begin(), kept.end());
        out = prog.splice(site, prog.subtree_end(site), copy);
        break;
    }
    }
    if (record != nullptr) {
        *record = { kind, site };
    }
    return out;
}

// Replaces a uniformly chosen subtree of `a` with a uniformly chosen
// subtree of `b`. Offspring deeper than max_depth are resampled up to
// `max_tries` times, after which `a` is returned unchanged.
inline auto crossover(const Program& a, const Program& b, std::size_t max_depth, Rng& rng, std::size_t max_tries = 20)
    -> Program
{
    expect(!a.empty() && !b.empty(), "cannot cross empty programs");
    for (std::size_t t = 0; t < max_tries; ++t) {
        auto i = uniform_index(rng, a.size());
        auto j = uniform_index(rng, b.size());
        auto child = a.splice(i, a.subtree_end(i), b.subtree(j));
        if (child.depth() <= max_depth) {
            return child;
        }
    }
    return a;
}

} // namespace fairgp
