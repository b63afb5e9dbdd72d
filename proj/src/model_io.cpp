// SPDX-License-Identifier: Apache-2.0
#include "binary_io.hpp"
#include "derd/error.hpp"
#include "derd/network.hpp"

#include <fstream>

namespace derd {

void save_model(const std::filesystem::path& path, const ModelParams& params,
                const NetworkConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("DERD", 4);
  detail::write_le<std::uint32_t>(out, kModelFormatVersion);
  for (int v : {cfg.num_planes, cfg.radii.r_w, cfg.radii.r_h, cfg.conv_channels, cfg.hidden_size(),
                static_cast<int>(cfg.head), static_cast<int>(cfg.mapping)})
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  const auto named = params.named();
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t->data) detail::write_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  const std::string what = "model file " + path.string();
  detail::expect_magic(in, "DERD", what);
  const auto version = detail::read_le<std::uint32_t>(in, what);
  if (version != kModelFormatVersion)
    throw DataError(what + ": unsupported format version " + std::to_string(version));
  std::uint32_t block[7];
  for (auto& v : block) v = detail::read_le<std::uint32_t>(in, what);
  Model m;
  m.config.num_planes = static_cast<int>(block[0]);
  m.config.radii = {static_cast<int>(block[1]), static_cast<int>(block[2])};
  m.config.conv_channels = static_cast<int>(block[3]);
  m.config.hidden = static_cast<int>(block[4]);
  if (block[5] > 1 || block[6] > 1) throw DataError(what + ": bad head or mapping field");
  m.config.head = static_cast<HeadType>(block[5]);
  m.config.mapping = static_cast<DepthMapping>(block[6]);
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    throw DataError(what + ": " + e.what());
  }
  // A hidden size equal to the conv frame size is stored as the automatic value.
  if (m.config.hidden == m.config.gru_input()) m.config.hidden = 0;

  m.params = ModelParams::zeros(m.config);
  auto named = m.params.named();
  const auto count = detail::read_le<std::uint32_t>(in, what);
  if (count != named.size()) throw DataError(what + ": unexpected tensor count");
  for (auto& [name, t] : named) {
    const auto len = detail::read_le<std::uint32_t>(in, what);
    if (len > 256) throw DataError(what + ": tensor name too long");
    std::string got(len, '\0');
    if (!in.read(got.data(), len)) throw DataError("truncated " + what);
    if (got != name) throw DataError(what + ": expected tensor '" + name + "', found '" + got + "'");
    const auto rank = detail::read_le<std::uint32_t>(in, what);
    if (rank != t->shape.size()) throw DataError(what + ": rank mismatch for " + name);
    for (int d : t->shape)
      if (detail::read_le<std::uint32_t>(in, what) != static_cast<std::uint32_t>(d))
        throw DataError(what + ": shape mismatch for " + name);
    for (double& v : t->data) v = detail::read_le<float>(in, what);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(what + ": trailing bytes");
  return m;
}

}  // namespace derd
