#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace foundry {

// Standard alphabet with '=' padding.
std::string base64_encode(std::string_view bytes);
// std::nullopt on any character outside the alphabet or bad padding.
std::optional<std::string> base64_decode(std::string_view text);

}  // namespace foundry
