// Copyright 2026 The ilex Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ILEX_BINIO_HPP_
#define ILEX_BINIO_HPP_

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ilex/common.hpp"

// All binary artifacts are little-endian; this code assumes a
// little-endian host.
static_assert(std::endian::native == std::endian::little,
              "binary formats require a little-endian host");

namespace ilex::binio {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(std::string("truncated or unreadable data: ") + what);
  return v;
}

template <typename T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  if (!v.empty()) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
}

template <typename T>
std::vector<T> get_vec(std::istream& in, const char* what,
                       std::size_t max_len = 1u << 28) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > max_len) throw DataError(std::string("corrupt length field: ") + what);
  std::vector<T> v(n);
  if (n > 0) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw DataError(std::string("truncated data: ") + what);
  }
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint32_t>(in, what);
  if (n > (1u << 28)) throw DataError(std::string("corrupt string field: ") + what);
  std::string s(n, '\0');
  if (n > 0) {
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError(std::string("truncated data: ") + what);
  }
  return s;
}

}  // namespace ilex::binio

#endif  // ILEX_BINIO_HPP_
