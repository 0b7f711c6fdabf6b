#pragma once

// Model file: "MSVW1", u32 header length, UTF-8 key=value header, then
// named tensors (u32 name length, name, u32 rank, u32 extents..., float32
// little-endian data) until end of file.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "msv/binary_io.hpp"
#include "msv/encoder/encoder.hpp"
#include "msv/kv.hpp"

namespace msv::encoder {

inline constexpr char kModelMagic[] = "MSVW1";

inline void PutFrontend(KeyValues &kv, const dsp::FrontendConfig &f) {
  kv["frontend.n_mels"] = std::to_string(f.n_mels);
  kv["frontend.f_min"] = FormatDouble(f.f_min);
  kv["frontend.f_max"] = FormatDouble(f.f_max);
  kv["frontend.win_ms"] = FormatDouble(f.win_ms);
  kv["frontend.step_ms"] = FormatDouble(f.step_ms);
  kv["frontend.n_fft"] = std::to_string(f.n_fft);
  kv["frontend.preemph"] = FormatDouble(f.preemph);
  kv["frontend.log_floor"] = FormatDouble(f.log_floor);
}

inline std::string JoinInts(const std::array<int, 4> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline void PutEncoder(KeyValues &kv, const EncoderConfig &e) {
  kv["encoder.n_frames"] = std::to_string(e.n_frames);
  kv["encoder.base_channels"] = std::to_string(e.base_channels);
  kv["encoder.blocks"] = JoinInts(e.blocks_per_group);
  kv["encoder.strides"] = JoinInts(e.group_strides);
  kv["encoder.embed_dim"] = std::to_string(e.embed_dim);
  kv["encoder.attention_dim"] = std::to_string(e.attention_dim);
  kv["encoder.init"] = InitName(e.init);
}

/// Applies one frontend.* key; returns false if the key is not one.
inline bool SetFrontendKey(dsp::FrontendConfig &f, const std::string &key, const std::string &value) {
  if (key == "frontend.n_mels") f.n_mels = static_cast<int>(ParseInt(key, value));
  else if (key == "frontend.f_min") f.f_min = ParseDouble(key, value);
  else if (key == "frontend.f_max") f.f_max = ParseDouble(key, value);
  else if (key == "frontend.win_ms") f.win_ms = ParseDouble(key, value);
  else if (key == "frontend.step_ms") f.step_ms = ParseDouble(key, value);
  else if (key == "frontend.n_fft") f.n_fft = static_cast<int>(ParseInt(key, value));
  else if (key == "frontend.preemph") f.preemph = ParseDouble(key, value);
  else if (key == "frontend.log_floor") f.log_floor = ParseDouble(key, value);
  else return false;
  return true;
}

inline bool SetEncoderKey(EncoderConfig &e, const std::string &key, const std::string &value) {
  auto four = [&](std::array<int, 4> &dst) {
    const auto v = ParseIntList(key, value);
    if (v.size() != 4) Fail(ErrorKind::kMalformedInput, key + ": expected four comma-separated integers");
    for (int i = 0; i < 4; ++i) dst[i] = static_cast<int>(v[i]);
  };
  if (key == "encoder.n_frames") e.n_frames = static_cast<int>(ParseInt(key, value));
  else if (key == "encoder.base_channels") e.base_channels = static_cast<int>(ParseInt(key, value));
  else if (key == "encoder.blocks") four(e.blocks_per_group);
  else if (key == "encoder.strides") four(e.group_strides);
  else if (key == "encoder.embed_dim") e.embed_dim = static_cast<int>(ParseInt(key, value));
  else if (key == "encoder.attention_dim") e.attention_dim = static_cast<int>(ParseInt(key, value));
  else if (key == "encoder.init") e.init = ParseInit(value);
  else return false;
  return true;
}

namespace detail {

inline void WriteTensor(std::ostream &os, const std::string &name, const nn::Shape &shape, const float *data) {
  io::WriteString(os, name);
  io::WriteU32(os, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) io::WriteU32(os, static_cast<std::uint32_t>(d));
  const std::size_t n = nn::NumElements(shape);
  for (std::size_t i = 0; i < n; ++i) io::WriteF32(os, data[i]);
}

}  // namespace detail

inline void WriteModel(std::ostream &os, const Encoder<float> &model) {
  KeyValues kv;
  PutFrontend(kv, model.frontend());
  PutEncoder(kv, model.config());
  kv["stream.tag"] = model.stream_tag();
  kv["frontend.hash"] = std::to_string(model.frontend().Hash());
  os.write(kModelMagic, 5);
  io::WriteString(os, FormatKeyValues(kv));
  for (const auto &p : model.params()) detail::WriteTensor(os, p.name, p.value.shape(), p.value.data());
  for (const auto &[name, st] : model.bn_stats()) {
    detail::WriteTensor(os, name + ".running_mean", st.running_mean.shape(), st.running_mean.data());
    detail::WriteTensor(os, name + ".running_var", st.running_var.shape(), st.running_var.data());
  }
  if (const auto &mean = model.embedding_mean())
    detail::WriteTensor(os, "embedding_mean", {static_cast<int>(mean->size())}, mean->data());
  if (!os) Fail(ErrorKind::kIoError, "failed writing model");
}

inline Encoder<float> ReadModel(std::istream &is) {
  io::ExpectMagic(is, kModelMagic);
  const KeyValues kv = ParseKeyValues(io::ReadString(is));
  dsp::FrontendConfig frontend;
  EncoderConfig cfg;
  std::string tag;
  std::uint64_t hash = 0;
  bool have_hash = false;
  for (const auto &[k, v] : kv) {
    if (SetFrontendKey(frontend, k, v) || SetEncoderKey(cfg, k, v)) continue;
    if (k == "stream.tag") {
      tag = v;
    } else if (k == "frontend.hash") {
      hash = std::stoull(v);
      have_hash = true;
    } else {
      Fail(ErrorKind::kMalformedInput, "unknown model header key '" + k + "'");
    }
  }
  cfg.n_mels = frontend.n_mels;
  if (have_hash && hash != frontend.Hash())
    Fail(ErrorKind::kMalformedInput, "front-end hash does not match header configuration");
  Encoder<float> model = Encoder<float>::Create(cfg, frontend, 0, tag.empty() ? "custom" : tag);

  std::set<std::string> seen;
  std::uint32_t name_len = 0;
  while (io::TryReadU32(is, name_len)) {
    const std::string name = io::ReadBytes(is, name_len, 4096);
    const std::uint32_t rank = io::ReadU32(is);
    if (rank > 8) Fail(ErrorKind::kMalformedInput, "tensor rank too large");
    nn::Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(io::ReadU32(is)));
    std::vector<float> data(nn::NumElements(shape));
    for (float &f : data) f = io::ReadF32(is);
    if (!seen.insert(name).second) Fail(ErrorKind::kMalformedInput, "duplicate tensor " + name);

    auto assign = [&](nn::Tensor<float> &dst) {
      if (dst.shape() != shape)
        Fail(ErrorKind::kMalformedInput, "tensor " + name + " has shape " + nn::ShapeString(shape) + ", expected " +
                                             nn::ShapeString(dst.shape()));
      dst = nn::Tensor<float>(shape, std::move(data));
    };
    if (name == "embedding_mean") {
      if (shape != nn::Shape{cfg.embed_dim}) Fail(ErrorKind::kMalformedInput, "embedding_mean shape");
      model.set_embedding_mean(std::move(data));
    } else if (model.has_param(name)) {
      assign(model.param(name).value);
      model.param(name).ZeroGrad();
    } else if (name.ends_with(".running_mean")) {
      assign(model.stats(name.substr(0, name.size() - 13)).running_mean);
    } else if (name.ends_with(".running_var")) {
      assign(model.stats(name.substr(0, name.size() - 12)).running_var);
    } else {
      Fail(ErrorKind::kMalformedInput, "unknown tensor " + name);
    }
  }
  const std::size_t expected = model.params().size() + 2 * model.bn_stats().size();
  std::size_t got = seen.size() - (seen.count("embedding_mean") ? 1 : 0);
  if (got != expected) Fail(ErrorKind::kMalformedInput, "model file is missing tensors");
  return model;
}

inline void SaveModel(const std::string &path, const Encoder<float> &model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteModel(os, model);
}

inline Encoder<float> LoadModel(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadModel(is);
}

}  // namespace msv::encoder
