#include "epg/model.hpp"

#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace epg::net {

void NetConfig::validate() const {
  if (input_len < 1) throw std::invalid_argument("net config: input_len must be positive");
  if (filter_width < 1) throw std::invalid_argument("net config: filter_width must be positive");
  if (base_filters < 1) throw std::invalid_argument("net config: base_filters must be positive");
  if (n_blocks < 0) throw std::invalid_argument("net config: n_blocks must be >= 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("net config: dropout_rate must be in [0, 1)");
  if (n_classes < 2) throw std::invalid_argument("net config: n_classes must be >= 2");
  if (static_cast<int>(block_strides.size()) != n_blocks)
    throw std::invalid_argument("net config: block_strides must list one stride per block");
  if (static_cast<int>(block_factors.size()) != n_blocks)
    throw std::invalid_argument("net config: block_factors must list one factor per block");

  int64_t stride_product = 1;
  for (int b = 0; b < n_blocks; ++b) {
    if (block_strides[b] != 1 && block_strides[b] != 2)
      throw std::invalid_argument("net config: block " + std::to_string(b) +
                                  ": stride must be 1 or 2");
    stride_product *= block_strides[b];
  }
  for (int b = 0; b < n_blocks; ++b) {
    if (block_factors[b] < 0)
      throw std::invalid_argument("net config: block " + std::to_string(b) +
                                  ": factor must be >= 0");
    int prev = (b == 0) ? block_factors[0] : block_factors[b - 1];
    if (block_factors[b] < prev)
      throw std::invalid_argument("net config: block " + std::to_string(b) +
                                  ": factor sequence must be nondecreasing");
    if (block_factors[b] - prev > 1)
      throw std::invalid_argument("net config: block " + std::to_string(b) +
                                  ": factor may increase by at most 1 per block");
  }
  if (input_len % stride_product != 0)
    throw std::invalid_argument("net config: input_len must be divisible by the stride product " +
                                std::to_string(stride_product));
}

void save_model(ModelT<float>& model, const std::filesystem::path& path) {
  ad::save_checkpoint(path, model.state());
}

void load_model(ModelT<float>& model, const std::filesystem::path& path) {
  model.load_state(ad::load_checkpoint(path));
}

std::string describe_json(const std::vector<LayerRow>& rows) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : rows) {
    if (r.name == "dense") {
      doc.push_back({{"name", r.name}, {"output_shape", {r.out_len}}});
    } else {
      doc.push_back({{"name", r.name},
                     {"filter_width", r.filter_width},
                     {"filters", r.filters},
                     {"stride", r.stride},
                     {"factor", r.factor},
                     {"output_shape", {r.out_len, 1, r.out_channels}}});
    }
  }
  return doc.dump(2);
}

std::string describe_csv(const std::vector<LayerRow>& rows) {
  std::ostringstream out;
  out << "name,filter_width,filters,stride,factor,out_len,out_channels\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.filter_width << ',' << r.filters << ',' << r.stride << ','
        << r.factor << ',' << r.out_len << ',' << r.out_channels << '\n';
  return out.str();
}

}  // namespace epg::net
