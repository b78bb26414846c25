#pragma once

// Single-file tensor container.
//
// Layout, all integers little-endian:
//   u32           manifest length M
//   M bytes       manifest JSON {"format","tensor_count","names",(optional)"meta"}
//   per tensor:
//     u32         header length H
//     H bytes     header JSON {"name","dtype","shape"}
//     payload     raw float32 values, row-major
//
// dtype is always "f32". The manifest "meta" object carries arbitrary
// caller JSON (model configs, provenance).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mint/core/error.hpp"
#include "mint/core/tensor.hpp"

namespace mint {

inline constexpr const char* kTensorContainerFormat = "mint-tensors-v1";

class TensorContainer {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, Tensor t) {
    if (has(name)) throw InputError("container already holds a tensor named '" + name + "'");
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  }

  bool has(const std::string& name) const {
    for (const auto& n : names_)
      if (n == name) return true;
    return false;
  }

  const Tensor& get(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return tensors_[i];
    throw InputError("container has no tensor named '" + name + "'");
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    nlohmann::json manifest;
    manifest["format"] = kTensorContainerFormat;
    manifest["tensor_count"] = names_.size();
    manifest["names"] = names_;
    if (!meta.empty()) manifest["meta"] = meta;
    write_block(f, manifest.dump());
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const Tensor& t = tensors_[i];
      nlohmann::json header;
      header["name"] = names_[i];
      header["dtype"] = "f32";
      header["shape"] = t.shape();
      write_block(f, header.dump());
      auto d = t.data();
      f.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(float)));
    }
    if (!f) throw InputError("write failed for '" + path + "'");
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "' for reading");
    nlohmann::json manifest = parse_block(f, path, "manifest");
    if (manifest.value("format", "") != kTensorContainerFormat)
      throw InputError("'" + path + "' is not a " + std::string(kTensorContainerFormat) +
                       " container");
    TensorContainer c;
    if (manifest.contains("meta")) c.meta = manifest["meta"];
    const std::size_t count = manifest.at("tensor_count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
      nlohmann::json header = parse_block(f, path, "tensor header");
      const std::string dtype = header.at("dtype").get<std::string>();
      if (dtype != "f32")
        throw InputError("unsupported dtype '" + dtype + "' in '" + path + "'");
      Shape shape = header.at("shape").get<Shape>();
      auto n = shape_numel(shape);
      std::vector<float> values(static_cast<std::size_t>(n));
      f.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(float)));
      if (!f) throw InputError("truncated payload in '" + path + "'");
      c.add(header.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
    }
    return c;
  }

 private:
  static void write_block(std::ofstream& f, const std::string& json_text) {
    const std::uint32_t len = static_cast<std::uint32_t>(json_text.size());
    char lenbuf[4];
    std::memcpy(lenbuf, &len, 4);
    f.write(lenbuf, 4);
    f.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
  }

  static nlohmann::json parse_block(std::ifstream& f, const std::string& path, const char* what) {
    char lenbuf[4];
    f.read(lenbuf, 4);
    if (!f) throw InputError(std::string("truncated ") + what + " in '" + path + "'");
    std::uint32_t len = 0;
    std::memcpy(&len, lenbuf, 4);
    std::string text(len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(len));
    if (!f) throw InputError(std::string("truncated ") + what + " in '" + path + "'");
    return nlohmann::json::parse(text);
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

}  // namespace mint
