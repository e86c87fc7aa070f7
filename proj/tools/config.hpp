#pragma once

#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stereolidar/model.hpp"
#include "stereolidar/train.hpp"

namespace stereolidar::cli {

using nlohmann::json;

/// Named configuration fields shared by the flag parser, `--config` files and
/// the run manifest. Each field name is both its JSON key and its flag.
class ConfigSchema {
 public:
  template <class T>
  void add(const std::string& name, T& target, const std::string& help) {
    fields_.push_back(Field{
        name,
        [&target, name, help](CLI::App& app) { return app.add_option("--" + name, target, help)->capture_default_str(); },
        [&target](const json& j) { target = j.get<T>(); },
        [&target]() { return json(target); },
        nullptr});
  }

  /// Registers one flag per field on `app`.
  void attach(CLI::App& app);

  /// Applies `config` to every field not given on the command line. A file
  /// holding a run manifest contributes its "config" object. Unknown keys are
  /// rejected.
  void merge(const json& config);

  json to_json() const;

 private:
  struct Field {
    std::string name;
    std::function<CLI::Option*(CLI::App&)> attach;
    std::function<void(const json&)> load;
    std::function<json()> dump;
    CLI::Option* option;
  };
  std::vector<Field> fields_;
};

void add_model_fields(ConfigSchema& schema, ModelConfig& cfg);
void add_scene_fields(ConfigSchema& schema, scenegen::SceneConfig& scene);
void add_train_fields(ConfigSchema& schema, train::TrainConfig& cfg, std::string& strategy);

json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const json& j);

}  // namespace stereolidar::cli
