#include "syncvsr/checkpoint.hpp"

namespace syncvsr {

using nlohmann::json;

std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Mat& t = model.params[i];
    tensors.push_back({{"name", model.params.name(i)}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  const json header = {{"format_version", kCheckpointFormatVersion},
                       {"model_config", to_json(model.config)},
                       {"train_config", meta.train_config},
                       {"seed", meta.seed},
                       {"world_fingerprint", meta.world_fingerprint},
                       {"eval_split_id", meta.eval_split_id},
                       {"epoch", meta.epoch},
                       {"tensors", tensors}};
  const std::string h = header.dump();
  ByteWriter w;
  w.bytes("SVCK");
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.bytes(h);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Mat& t = model.params[i];
    for (Eigen::Index k = 0; k < t.size(); ++k) w.f32(static_cast<float>(t.data()[k]));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader rd(bytes);
  require(rd.bytes(4) == "SVCK", ErrorKind::Format, "not a checkpoint file");
  const auto len = rd.u32();
  json header;
  try {
    header = json::parse(rd.bytes(len));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  try {
    require(header.at("format_version").get<std::uint32_t>() == kCheckpointFormatVersion, ErrorKind::VersionMismatch,
            "unsupported checkpoint version");
    ck.model.config = encoder_config_from_json(header.at("model_config"));
    ck.meta.train_config = header.at("train_config");
    ck.meta.seed = header.at("seed");
    ck.meta.world_fingerprint = header.at("world_fingerprint");
    ck.meta.eval_split_id = header.at("eval_split_id");
    ck.meta.epoch = header.at("epoch");
    const std::size_t data_start = rd.position();
    const auto& tensors = header.at("tensors");
    const auto layout = parameter_layout(ck.model.config);
    require(tensors.size() == layout.size(), ErrorKind::ShapeMismatch,
            "checkpoint holds " + std::to_string(tensors.size()) + " tensors, config needs " + std::to_string(layout.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& t = tensors[i];
      const std::string name = t.at("name");
      const int rows = t.at("rows");
      const int cols = t.at("cols");
      require(name == layout[i].first && rows == layout[i].second.first && cols == layout[i].second.second,
              ErrorKind::ShapeMismatch, "tensor " + name + " does not match the model config");
      rd.seek(data_start + t.at("offset").get<std::size_t>());
      Mat m(rows, cols);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(rd.f32());
      ck.model.params.add(name, std::move(m));
    }
    require(rd.at_end(), ErrorKind::Format, "trailing bytes after checkpoint tensors");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint header: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string parameter_hash(const Parameters& params) {
  ByteWriter w;
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.bytes(params.name(i));
    for (Eigen::Index k = 0; k < params[i].size(); ++k) w.f64(params[i].data()[k]);
  }
  return sha1_hex(w.str());
}

}  // namespace syncvsr
