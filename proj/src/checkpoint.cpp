#include <fstream>
#include <sstream>

#include "utvae/networks.hpp"

namespace utvae::nets {

namespace {

ParamGroup parse_group(const std::string& s) {
  if (s == "generative") return ParamGroup::kGenerative;
  if (s == "inference") return ParamGroup::kInference;
  if (s == "auxiliary") return ParamGroup::kAuxiliary;
  throw ValidationError("checkpoint: unknown parameter group '" + s + "'");
}

template <class T>
T expect_field(std::istream& in, const std::string& key) {
  std::string k;
  T v{};
  if (!(in >> k) || k != key || !(in >> v)) {
    throw ValidationError("checkpoint: expected field '" + key + "'");
  }
  return v;
}

}  // namespace

void save_checkpoint(const CevaeModel& model, const std::filesystem::path& path) {
  const ArchConfig& a = model.arch();
  std::ostringstream os;
  os.precision(17);
  os << kCheckpointMagic << '\n';
  os << "x_dim " << a.x_dim << '\n';
  os << "x_binary ";
  for (bool b : a.x_binary) os << (b ? '1' : '0');
  os << '\n';
  os << "z_dim " << a.z_dim << '\n';
  os << "hidden_layers " << a.hidden_layers << '\n';
  os << "hidden_units " << a.hidden_units << '\n';
  os << "y_binary " << (a.y_binary ? 1 : 0) << '\n';
  os << "activation " << diff::activation_name(a.activation) << '\n';
  os << "outcome_scale " << model.outcome_scale().mean << ' ' << model.outcome_scale().std << '\n';
  os << "params " << model.params().size() << '\n';
  for (const diff::Parameter& p : model.params()) {
    const Tensor& v = p.value();
    os << "param " << p.id() << ' ' << diff::group_name(p.group()) << ' ' << v.rank();
    for (std::size_t d : v.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << '\n';
  }
  os << "end\n";

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot write " + tmp.string());
    out << os.str();
    if (!out.flush()) throw Error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CevaeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("checkpoint: cannot open " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw ValidationError("checkpoint: bad header '" + magic + "' in " + path.string());
  }
  ArchConfig a;
  a.x_dim = expect_field<std::size_t>(in, "x_dim");
  const auto mask = expect_field<std::string>(in, "x_binary");
  a.x_binary.clear();
  for (char c : mask) {
    if (c != '0' && c != '1') throw ValidationError("checkpoint: bad x_binary mask");
    a.x_binary.push_back(c == '1');
  }
  a.z_dim = expect_field<std::size_t>(in, "z_dim");
  a.hidden_layers = expect_field<std::size_t>(in, "hidden_layers");
  a.hidden_units = expect_field<std::size_t>(in, "hidden_units");
  a.y_binary = expect_field<int>(in, "y_binary") != 0;
  a.activation = diff::parse_activation(expect_field<std::string>(in, "activation"));
  OutcomeScale scale;
  scale.mean = expect_field<double>(in, "outcome_scale");
  if (!(in >> scale.std)) throw ValidationError("checkpoint: bad outcome_scale");

  CevaeModel model(a, 0);
  model.set_outcome_scale(scale);
  const auto count = expect_field<std::size_t>(in, "params");
  if (count != model.params().size()) {
    throw ValidationError("checkpoint: " + std::to_string(count) + " parameters, architecture expects " +
                          std::to_string(model.params().size()));
  }
  for (std::size_t k = 0; k < count; ++k) {
    const auto id = expect_field<std::string>(in, "param");
    std::string group;
    std::size_t rank = 0;
    in >> group >> rank;
    diff::Shape shape(rank);
    for (auto& d : shape) in >> d;
    diff::Parameter* p = model.params().find(id);
    if (!p) throw ValidationError("checkpoint: unknown parameter '" + id + "'");
    if (parse_group(group) != p->group() || shape != p->value().shape()) {
      throw ValidationError("checkpoint: parameter '" + id + "' does not match the architecture");
    }
    for (double& v : p->value().data()) {
      if (!(in >> v)) throw ValidationError("checkpoint: truncated values for '" + id + "'");
    }
  }
  std::string end;
  if (!(in >> end) || end != "end") throw ValidationError("checkpoint: missing end marker");
  model.mark_trained();
  return model;
}

}  // namespace utvae::nets
