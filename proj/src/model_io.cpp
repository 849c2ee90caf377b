#include "uad/model_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace uad {

namespace {

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    std::size_t count() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

void write_container(const std::string& path, const std::string& kind,
                     const std::vector<std::pair<std::string, std::string>>& fields,
                     const std::vector<TensorEntry>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("model: cannot open for writing: " + path);
    out << "uadmodel 1\n";
    out << "kind " << kind << "\n";
    for (const auto& [k, v] : fields) out << k << " " << v << "\n";
    out << "tensors " << tensors.size() << "\n";
    for (const auto& t : tensors) {
        out << "tensor " << t.name << " " << t.shape.size();
        for (int d : t.shape) out << " " << d;
        out << "\n";
    }
    out << "data\n";
    for (const auto& t : tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("model: write failed: " + path);
}

struct Container {
    std::string kind;
    std::map<std::string, std::string> fields;
    std::vector<TensorEntry> tensors;

    const TensorEntry& tensor(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw std::runtime_error("model: missing tensor " + name);
    }
    const std::string& field(const std::string& key) const {
        auto it = fields.find(key);
        if (it == fields.end()) throw std::runtime_error("model: missing field " + key);
        return it->second;
    }
    double num(const std::string& key) const { return std::stod(field(key)); }
    long inum(const std::string& key) const { return std::stol(field(key)); }
};

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("model: cannot open: " + path);
    Container c;
    std::string line;
    if (!std::getline(in, line) || line != "uadmodel 1")
        throw std::runtime_error("model: bad container signature: " + path);
    std::size_t tensor_count = 0;
    bool in_tensors = false;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "kind") {
            ls >> c.kind;
        } else if (key == "tensors") {
            ls >> tensor_count;
            in_tensors = true;
        } else if (key == "tensor") {
            if (!in_tensors) throw std::runtime_error("model: tensor before tensors count: " + path);
            TensorEntry t;
            std::size_t nd = 0;
            ls >> t.name >> nd;
            for (std::size_t i = 0; i < nd; ++i) {
                int d = 0;
                ls >> d;
                if (d < 1) throw std::runtime_error("model: bad tensor shape: " + path);
                t.shape.push_back(d);
            }
            if (!ls) throw std::runtime_error("model: malformed tensor line: " + path);
            c.tensors.push_back(std::move(t));
        } else {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
            c.fields[key] = rest;
        }
    }
    if (line != "data") throw std::runtime_error("model: missing data section: " + path);
    if (c.tensors.size() != tensor_count)
        throw std::runtime_error("model: tensor index does not match declared count: " + path);
    for (auto& t : c.tensors) {
        t.data.resize(t.count());
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
            throw std::runtime_error("model: payload shorter than the tensor index: " + path);
    }
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
        throw std::runtime_error("model: payload longer than the tensor index: " + path);
    return c;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void bn_tensors(const std::string& prefix, const BatchNorm<float>& bn, std::vector<TensorEntry>& out) {
    const int c = bn.channels();
    out.push_back({prefix + ".scale", {c}, bn.scale});
    out.push_back({prefix + ".shift", {c}, bn.shift});
    out.push_back({prefix + ".running_mean", {c}, bn.running_mean});
    out.push_back({prefix + ".running_var", {c}, bn.running_var});
}

void conv_tensors(const std::string& prefix, const ConvLayer<float>& conv,
                  std::vector<TensorEntry>& out) {
    out.push_back({prefix + ".weight", {conv.out_ch, conv.in_ch, conv.kh, conv.kw}, conv.weight});
    out.push_back({prefix + ".bias", {static_cast<int>(conv.bias.size())}, conv.bias});
}

void load_named(const Container& c, const std::string& name, std::vector<float>& dst) {
    const TensorEntry& t = c.tensor(name);
    if (t.data.size() != dst.size())
        throw std::runtime_error("model: tensor " + name + " has " + std::to_string(t.data.size()) +
                                 " values, expected " + std::to_string(dst.size()));
    dst = t.data;
}

}  // namespace

void save_sae(const SaeModel<float>& model, const std::string& path) {
    const SaeConfig& cfg = model.config;
    std::vector<std::pair<std::string, std::string>> fields;
    fields.emplace_back("patch_size", std::to_string(cfg.patch_size));
    fields.emplace_back("in_channels", std::to_string(cfg.in_channels));
    fields.emplace_back("alpha", fmt(cfg.alpha));
    fields.emplace_back("epochs", std::to_string(cfg.epochs));
    fields.emplace_back("batch_size", std::to_string(cfg.batch_size));
    fields.emplace_back("patches_per_subject", std::to_string(cfg.patches_per_subject));
    fields.emplace_back("validation_fraction", fmt(cfg.validation_fraction));
    fields.emplace_back("seed", std::to_string(cfg.seed));
    {
        std::ostringstream os;
        os << cfg.blocks.size();
        for (const auto& b : cfg.blocks) os << " " << b.kernel << " " << b.stride << " " << b.filters;
        fields.emplace_back("blocks", os.str());
    }
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < model.spatial_chain.size(); ++i)
            os << (i ? " " : "") << model.spatial_chain[i];
        fields.emplace_back("chain", os.str());
    }
    fields.emplace_back("latent_dim", std::to_string(model.latent_dim));

    std::vector<TensorEntry> tensors;
    for (std::size_t i = 0; i < model.enc_conv.size(); ++i) {
        conv_tensors("enc" + std::to_string(i), model.enc_conv[i], tensors);
        bn_tensors("enc" + std::to_string(i) + ".bn", model.enc_bn[i], tensors);
    }
    for (std::size_t i = 0; i < model.dec_conv.size(); ++i) {
        conv_tensors("dec" + std::to_string(i), model.dec_conv[i], tensors);
        if (i < model.dec_bn.size()) bn_tensors("dec" + std::to_string(i) + ".bn", model.dec_bn[i], tensors);
    }
    write_container(path, "sae", fields, tensors);
}

SaeModel<float> load_sae(const std::string& path) {
    const Container c = read_container(path);
    if (c.kind != "sae") throw std::runtime_error("model: expected kind sae, found " + c.kind + ": " + path);
    SaeConfig cfg;
    cfg.patch_size = static_cast<int>(c.inum("patch_size"));
    cfg.in_channels = static_cast<int>(c.inum("in_channels"));
    cfg.alpha = c.num("alpha");
    cfg.epochs = static_cast<int>(c.inum("epochs"));
    cfg.batch_size = static_cast<int>(c.inum("batch_size"));
    cfg.patches_per_subject = c.inum("patches_per_subject");
    cfg.validation_fraction = c.num("validation_fraction");
    cfg.seed = static_cast<std::uint64_t>(c.inum("seed"));
    {
        std::istringstream ls(c.field("blocks"));
        std::size_t nb = 0;
        ls >> nb;
        cfg.blocks.clear();
        for (std::size_t i = 0; i < nb; ++i) {
            ConvBlockSpec b;
            ls >> b.kernel >> b.stride >> b.filters;
            cfg.blocks.push_back(b);
        }
        if (!ls) throw std::runtime_error("model: malformed blocks field: " + path);
    }

    SaeModel<float> model = build_sae<float>(cfg);  // re-validates the shape chain

    // the stored chain and latent size must agree with the rebuilt ones
    {
        std::istringstream ls(c.field("chain"));
        std::vector<int> chain;
        int v;
        while (ls >> v) chain.push_back(v);
        if (chain != model.spatial_chain)
            throw std::runtime_error("model: stored shape chain disagrees with architecture: " + path);
        if (static_cast<int>(c.inum("latent_dim")) != model.latent_dim)
            throw std::runtime_error("model: stored latent_dim disagrees with architecture: " + path);
    }

    for (std::size_t i = 0; i < model.enc_conv.size(); ++i) {
        const std::string p = "enc" + std::to_string(i);
        load_named(c, p + ".weight", model.enc_conv[i].weight);
        load_named(c, p + ".bias", model.enc_conv[i].bias);
        load_named(c, p + ".bn.scale", model.enc_bn[i].scale);
        load_named(c, p + ".bn.shift", model.enc_bn[i].shift);
        load_named(c, p + ".bn.running_mean", model.enc_bn[i].running_mean);
        load_named(c, p + ".bn.running_var", model.enc_bn[i].running_var);
    }
    for (std::size_t i = 0; i < model.dec_conv.size(); ++i) {
        const std::string p = "dec" + std::to_string(i);
        load_named(c, p + ".weight", model.dec_conv[i].weight);
        load_named(c, p + ".bias", model.dec_conv[i].bias);
        if (i < model.dec_bn.size()) {
            load_named(c, p + ".bn.scale", model.dec_bn[i].scale);
            load_named(c, p + ".bn.shift", model.dec_bn[i].shift);
            load_named(c, p + ".bn.running_mean", model.dec_bn[i].running_mean);
            load_named(c, p + ".bn.running_var", model.dec_bn[i].running_var);
        }
    }
    for (const auto& bn : model.enc_bn)
        for (float v : bn.running_var)
            if (v < 0) throw std::runtime_error("model: negative running variance: " + path);
    return model;
}

void save_ocsvm(const OcsvmModel& model, const std::string& path) {
    std::vector<std::pair<std::string, std::string>> fields;
    fields.emplace_back("gamma", fmt(model.gamma));
    fields.emplace_back("nu", fmt(model.nu));
    fields.emplace_back("rho", fmt(model.rho));
    fields.emplace_back("n_train", std::to_string(model.n_train));
    const int sv = static_cast<int>(model.support_vectors.size());
    const int dim = model.dim();
    std::vector<TensorEntry> tensors;
    {
        TensorEntry a;
        a.name = "alphas";
        a.shape = {sv};
        for (double v : model.alphas) a.data.push_back(static_cast<float>(v));
        tensors.push_back(std::move(a));
    }
    {
        TensorEntry s;
        s.name = "support_vectors";
        s.shape = {sv, dim};
        for (const auto& row : model.support_vectors)
            for (double v : row) s.data.push_back(static_cast<float>(v));
        tensors.push_back(std::move(s));
    }
    write_container(path, "ocsvm", fields, tensors);
}

OcsvmModel load_ocsvm(const std::string& path) {
    const Container c = read_container(path);
    if (c.kind != "ocsvm")
        throw std::runtime_error("model: expected kind ocsvm, found " + c.kind + ": " + path);
    OcsvmModel m;
    m.gamma = c.num("gamma");
    m.nu = c.num("nu");
    m.rho = c.num("rho");
    m.n_train = static_cast<int>(c.inum("n_train"));
    const TensorEntry& a = c.tensor("alphas");
    const TensorEntry& s = c.tensor("support_vectors");
    if (a.shape.size() != 1 || s.shape.size() != 2 || s.shape[0] != a.shape[0])
        throw std::runtime_error("model: inconsistent OC-SVM tensor shapes: " + path);
    const int sv = a.shape[0], dim = s.shape[1];
    for (int i = 0; i < sv; ++i) {
        m.alphas.push_back(a.data[i]);
        m.support_vectors.emplace_back(s.data.begin() + static_cast<std::size_t>(i) * dim,
                                       s.data.begin() + static_cast<std::size_t>(i + 1) * dim);
    }
    // dual feasibility: positive alphas below the box bound, summing to one
    if (!(m.gamma > 0) || !(m.nu > 0 && m.nu <= 1) || m.n_train < 2)
        throw std::runtime_error("model: invalid OC-SVM hyperparameters: " + path);
    double sum = 0;
    const double c_up = m.upper_bound();
    for (double v : m.alphas) {
        if (!(v > 0) || v > c_up * (1.0 + 1e-5))
            throw std::runtime_error("model: OC-SVM alphas violate the box constraint: " + path);
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5)
        throw std::runtime_error("model: OC-SVM alphas do not sum to 1: " + path);
    return m;
}

}  // namespace uad
