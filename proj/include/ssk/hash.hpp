#pragma once

#include <string>
#include <string_view>

namespace ssk {

/// Lower-case hex SHA-1 of `data`.
std::string sha1_hex(std::string_view data);

/// SHA-1 of "blob <size>\0<data>", the identifier git gives the same bytes.
std::string git_blob_sha1(std::string_view data);

}  // namespace ssk
