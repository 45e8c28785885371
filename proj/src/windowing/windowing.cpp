#include "foundry/windowing.hpp"

#include <algorithm>

namespace foundry::windowing {

PadStrategy parse_pad_strategy(std::string_view name) {
    if (name == "copy") return PadStrategy::copy;
    if (name == "zero") return PadStrategy::zero;
    if (name == "reflect") return PadStrategy::reflect;
    throw Error("unknown padding strategy '" + std::string(name) + "' (expected copy, zero or reflect)");
}

std::string_view to_string(PadStrategy s) {
    switch (s) {
        case PadStrategy::copy: return "copy";
        case PadStrategy::zero: return "zero";
        case PadStrategy::reflect: return "reflect";
    }
    return "?";
}

std::size_t Episode::length() const {
    if (!lowdim.empty()) return static_cast<std::size_t>(lowdim.begin()->second.rows());
    if (!images.empty()) return images.begin()->second.frames.size();
    return 0;
}

void Episode::validate() const {
    std::size_t t = length();
    if (t == 0) throw DataError("episode '" + id + "' is empty");
    for (const auto& [name, m] : lowdim) {
        if (static_cast<std::size_t>(m.rows()) != t)
            throw ShapeError("episode '" + id + "': field '" + name + "' has " + std::to_string(m.rows()) +
                             " rows, expected " + std::to_string(t));
        if (!m.allFinite()) throw DataError("episode '" + id + "': field '" + name + "' contains NaN or Inf");
    }
    for (const auto& [name, s] : images) {
        if (s.frames.size() != t)
            throw ShapeError("episode '" + id + "': image field '" + name + "' has " +
                             std::to_string(s.frames.size()) + " frames, expected " + std::to_string(t));
    }
}

namespace {

// Maps a possibly out-of-range row index back into [0, n) by mirroring about
// the boundary rows (period 2(n-1)).
std::size_t reflect_index(long i, std::size_t n) {
    long period = 2 * (static_cast<long>(n) - 1);
    long r = std::abs(i) % period;
    if (r >= static_cast<long>(n)) r = period - r;
    return static_cast<std::size_t>(r);
}

}  // namespace

RowMatrix pad(const RowMatrix& seq, std::size_t left, std::size_t right, PadStrategy strategy) {
    const auto n = static_cast<std::size_t>(seq.rows());
    if (n == 0) throw ShapeError("cannot pad an empty sequence");
    if (strategy == PadStrategy::reflect && n < 2 && (left > 0 || right > 0))
        throw ShapeError("reflect padding needs at least 2 rows");
    RowMatrix out(static_cast<Eigen::Index>(n + left + right), seq.cols());
    for (std::size_t r = 0; r < n + left + right; ++r) {
        long src = static_cast<long>(r) - static_cast<long>(left);
        auto row = out.row(static_cast<Eigen::Index>(r));
        if (src >= 0 && src < static_cast<long>(n)) {
            row = seq.row(src);
            continue;
        }
        switch (strategy) {
            case PadStrategy::copy: row = seq.row(src < 0 ? 0 : static_cast<Eigen::Index>(n - 1)); break;
            case PadStrategy::zero: row.setZero(); break;
            case PadStrategy::reflect: row = seq.row(static_cast<Eigen::Index>(reflect_index(src, n))); break;
        }
    }
    return out;
}

PaddingNeed required_padding(std::size_t length, std::size_t anchor, std::size_t n_past, std::size_t n_future) {
    PaddingNeed need;
    need.left = n_past > anchor ? n_past - anchor : 0;
    std::size_t last = length - 1;
    need.right = anchor + n_future > last ? anchor + n_future - last : 0;
    return need;
}

std::optional<Sample> extract_window(const Episode& ep, std::size_t anchor, const WindowSpec& spec) {
    const std::size_t t = ep.length();
    if (anchor >= t)
        throw Error("anchor " + std::to_string(anchor) + " out of range for episode '" + ep.id + "' of length " +
                    std::to_string(t));
    auto need = required_padding(t, anchor, spec.n_past, spec.n_future);
    if (need.left > spec.max_padding_left || need.right > spec.max_padding_right) return std::nullopt;

    Sample s;
    s.episode_id = ep.id;
    s.task = ep.task;
    s.anchor_t = anchor;
    s.n_past = spec.n_past;
    s.n_future = spec.n_future;
    s.anchor_relative_idx = spec.n_past;
    s.pad_left = need.left;
    s.pad_right = need.right;

    // Rows [first, last] of the episode are real; the rest is padding.
    const std::size_t first = anchor + need.left - spec.n_past;
    const std::size_t last = anchor + spec.n_future - need.right;
    const auto count = static_cast<Eigen::Index>(last - first + 1);
    for (const auto& [name, m] : ep.lowdim) {
        RowMatrix inner = m.middleRows(static_cast<Eigen::Index>(first), count);
        if (need.left == 0 && need.right == 0) {
            s.lowdim.emplace(name, std::move(inner));
        } else if (spec.pad_strategy == PadStrategy::reflect) {
            // Reflect from the whole episode so mirrored rows come from real
            // data beyond the window interior.
            RowMatrix padded = pad(m, need.left, need.right, PadStrategy::reflect);
            s.lowdim.emplace(name, padded.middleRows(static_cast<Eigen::Index>(anchor + need.left - spec.n_past),
                                                     static_cast<Eigen::Index>(spec.window_length())));
        } else {
            s.lowdim.emplace(name, pad(inner, need.left, need.right, spec.pad_strategy));
        }
    }
    for (const auto& [name, stream] : ep.images) {
        std::vector<std::size_t> frames;
        frames.reserve(spec.image_offsets.size());
        for (long off : spec.image_offsets) {
            long idx = std::clamp(static_cast<long>(anchor) + off, 0L, static_cast<long>(t) - 1);
            frames.push_back(static_cast<std::size_t>(idx));
        }
        s.image_frames.emplace(name, std::move(frames));
    }
    return s;
}

std::vector<std::optional<std::size_t>> window_rows(std::size_t length, std::size_t anchor,
                                                   const WindowSpec& spec) {
    if (anchor >= length) throw Error("anchor " + std::to_string(anchor) + " out of range");
    std::vector<std::optional<std::size_t>> rows;
    rows.reserve(spec.window_length());
    const long n = static_cast<long>(length);
    for (std::size_t r = 0; r < spec.window_length(); ++r) {
        long src = static_cast<long>(anchor) - static_cast<long>(spec.n_past) + static_cast<long>(r);
        if (src >= 0 && src < n) {
            rows.emplace_back(static_cast<std::size_t>(src));
            continue;
        }
        switch (spec.pad_strategy) {
            case PadStrategy::copy: rows.emplace_back(src < 0 ? 0 : length - 1); break;
            case PadStrategy::zero: rows.emplace_back(std::nullopt); break;
            case PadStrategy::reflect:
                if (length < 2) throw ShapeError("reflect padding needs at least 2 rows");
                rows.emplace_back(reflect_index(src, length));
                break;
        }
    }
    return rows;
}

std::vector<Sample> enumerate_samples(const Episode& ep, const WindowSpec& spec) {
    if (spec.stride == 0) throw Error("window stride must be >= 1");
    std::vector<Sample> out;
    for (std::size_t t = 0; t < ep.length(); t += spec.stride) {
        if (auto s = extract_window(ep, t, spec)) out.push_back(std::move(*s));
    }
    return out;
}

RowMatrix proprio_slice(const Sample& s, std::span<const std::string> fields) {
    const auto rows = static_cast<Eigen::Index>(s.anchor_relative_idx + 1);
    Eigen::Index width = 0;
    std::vector<const RowMatrix*> parts;
    for (const auto& f : fields) {
        auto it = s.lowdim.find(f);
        if (it == s.lowdim.end()) throw Error("sample has no proprioception field '" + f + "'");
        parts.push_back(&it->second);
        width += it->second.cols();
    }
    RowMatrix out(rows, width);
    Eigen::Index col = 0;
    for (const auto* m : parts) {
        out.middleCols(col, m->cols()) = m->topRows(rows);
        col += m->cols();
    }
    return out;
}

Sample sub_window(const Sample& s, std::size_t n_past, std::size_t n_future) {
    if (n_past > s.n_past || n_future > s.n_future)
        throw Error("sub-window (" + std::to_string(n_past) + ", " + std::to_string(n_future) +
                    ") exceeds the stored window (" + std::to_string(s.n_past) + ", " + std::to_string(s.n_future) +
                    ")");
    Sample out = s;
    out.n_past = n_past;
    out.n_future = n_future;
    out.anchor_relative_idx = n_past;
    const std::size_t drop_left = s.n_past - n_past;
    const std::size_t drop_right = s.n_future - n_future;
    out.pad_left = s.pad_left > drop_left ? s.pad_left - drop_left : 0;
    out.pad_right = s.pad_right > drop_right ? s.pad_right - drop_right : 0;
    for (auto& [name, m] : out.lowdim) {
        RowMatrix cut = m.middleRows(static_cast<Eigen::Index>(drop_left),
                                     static_cast<Eigen::Index>(n_past + 1 + n_future));
        m = std::move(cut);
    }
    return out;
}

}  // namespace foundry::windowing
