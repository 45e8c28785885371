#pragma once

// Anchor-centred windows over episodes.
//
// A sample anchored at t covers [t - n_past, t + n_future]. Rows outside the
// episode are synthesized by the padding strategy; when more padding is needed
// than max_padding_left / max_padding_right allow, the anchor is discarded.

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foundry/error.hpp"
#include "foundry/tensor.hpp"

namespace foundry::windowing {

enum class PadStrategy { copy, zero, reflect };

PadStrategy parse_pad_strategy(std::string_view name);
std::string_view to_string(PadStrategy s);

struct ImageStream {
    std::string ext = "jpg";
    std::vector<std::string> frames;  // opaque encoded bytes, one per timestep
};

struct Episode {
    std::string id;
    std::string task;
    std::map<std::string, RowMatrix> lowdim;  // T x D per field
    std::map<std::string, ImageStream> images;

    // T, taken from the first field. validate() checks all fields agree.
    std::size_t length() const;
    void validate() const;
};

inline constexpr std::size_t kUnlimitedPadding = std::numeric_limits<std::size_t>::max();

struct WindowSpec {
    std::size_t n_past = 0;
    std::size_t n_future = 0;
    PadStrategy pad_strategy = PadStrategy::copy;
    std::size_t max_padding_left = kUnlimitedPadding;
    std::size_t max_padding_right = kUnlimitedPadding;
    std::size_t stride = 1;
    // Image timesteps relative to the anchor. Out-of-range frames clamp to the
    // episode boundary regardless of pad_strategy.
    std::vector<long> image_offsets = {0};

    std::size_t window_length() const { return n_past + 1 + n_future; }
};

struct Sample {
    std::string episode_id;
    std::string task;
    std::size_t anchor_t = 0;
    std::size_t n_past = 0;
    std::size_t n_future = 0;
    std::size_t anchor_relative_idx = 0;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;
    std::map<std::string, RowMatrix> lowdim;                   // window_length x D
    std::map<std::string, std::vector<std::size_t>> image_frames;  // frame indices, one per image offset

    std::size_t window_length() const { return n_past + 1 + n_future; }
};

// Pads `seq` with `left` rows before and `right` rows after. Reflect mirrors
// about the boundary row without repeating it: [a,b,c] left 2 -> [c,b,a,b,c].
RowMatrix pad(const RowMatrix& seq, std::size_t left, std::size_t right, PadStrategy strategy);

struct PaddingNeed {
    std::size_t left = 0;
    std::size_t right = 0;
};

PaddingNeed required_padding(std::size_t length, std::size_t anchor, std::size_t n_past, std::size_t n_future);

// std::nullopt means the anchor was discarded by a padding threshold.
std::optional<Sample> extract_window(const Episode& ep, std::size_t anchor, const WindowSpec& spec);

// Episode row behind each position of the window anchored at `anchor`, as
// used by extract_window. std::nullopt marks a zero-padded row.
std::vector<std::optional<std::size_t>> window_rows(std::size_t length, std::size_t anchor, const WindowSpec& spec);

// One candidate per anchor 0, stride, 2*stride, ... with discards removed.
std::vector<Sample> enumerate_samples(const Episode& ep, const WindowSpec& spec);

// Past and current rows [0, anchor_relative_idx] of each field, concatenated
// along features in the given order.
RowMatrix proprio_slice(const Sample& s, std::span<const std::string> fields);

// Narrows a sample to a smaller (n_past, n_future) around the same anchor.
Sample sub_window(const Sample& s, std::size_t n_past, std::size_t n_future);

}  // namespace foundry::windowing
