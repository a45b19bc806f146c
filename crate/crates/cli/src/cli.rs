use clap::{Arg, ArgAction, Command};

fn opt(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name(value).help(help)
}

fn list(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    opt(name, value, help).action(ArgAction::Append)
}

fn flag(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).action(ArgAction::SetTrue).help(help)
}

fn sub(name: &'static str, about: &'static str) -> Command {
    Command::new(name)
        .about(about)
        .arg(opt("config", "FILE", "key=value settings; flags given on the command line win"))
}

fn workers() -> Arg {
    opt("workers", "N", "parallel workers for per-utterance work [default: 1]")
}

pub fn build() -> Command {
    Command::new("spkr")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Speaker embedding networks: features, training, verification scoring and analysis")
        .subcommand_required(true)
        .subcommand(
            sub("synth", "Generate a synthetic multi-speaker corpus with manifests and a trial list").args([
                opt("out", "DIR", "output directory"),
                opt("speakers", "N", "number of speakers [default: 20]"),
                opt("utterances", "N", "utterances per speaker [default: 10]"),
                opt("test-utterances", "N", "utterances per speaker held out for testing [default: 5]"),
                opt("min-seconds", "S", "shortest utterance [default: 2]"),
                opt("max-seconds", "S", "longest utterance [default: 5]"),
                opt("noise", "SIGMA", "noise level relative to the voiced peak [default: 0.05]"),
                opt("seed", "N", "random seed [default: 0]"),
            ]),
        )
        .subcommand(
            sub("features", "Extract log-Mel features for every utterance of a manifest").args([
                opt("manifest", "FILE", "input manifest (id<TAB>path[<TAB>speaker])"),
                opt("out", "DIR", "directory for feature files and their manifest"),
                workers(),
            ]),
        )
        .subcommand(
            sub("train", "Train a speaker classifier on fixed-length random crops").args([
                opt("manifest", "FILE", "training manifest"),
                opt("checkpoint", "FILE", "checkpoint written after every epoch"),
                opt("variant", "NAME", "resnet, resnext-<w>w<c>c or res2net-<w>w<s>s [default: res2net-14w8s]"),
                opt("seed", "N", "seed for initialization, shuffling and crops [default: 0]"),
                opt("epochs", "N", "[default: 30]"),
                opt("batch-size", "N", "[default: 16]"),
                opt("lr", "RATE", "initial learning rate [default: 0.01]"),
                opt("momentum", "M", "[default: 0.9]"),
                opt("weight-decay", "W", "[default: 0]"),
                opt("lr-decay", "F", "learning-rate multiplier after the decay point [default: 0.1]"),
                opt("decay-at", "FRACTION", "fraction of epochs before decaying [default: 0.6667]"),
                opt("crop-seconds", "S", "training crop length [default: 2]"),
                opt("log", "FILE", "append per-epoch loss and accuracy lines here"),
                flag("resume", "continue from --checkpoint if it exists"),
                workers(),
            ]),
        )
        .subcommand(
            sub("embed", "Write utterance embeddings as TSV rows").args([
                opt("checkpoint", "FILE", "trained model"),
                opt("manifest", "FILE", "utterances to embed"),
                opt("out", "FILE", "output TSV (id followed by values)"),
                workers(),
            ]),
        )
        .subcommand(
            sub("eval", "Score a trial list and report EER and minDCF").args([
                opt("checkpoint", "FILE", "trained model; without it a random model is built from --variant and --seed"),
                opt("variant", "NAME", "architecture for an untrained model"),
                opt("seed", "N", "initialization seed for an untrained model [default: 0]"),
                opt("trials", "FILE", "lines of `label enroll_id test_id`"),
                opt("manifest", "FILE", "manifest resolving every utterance id"),
                list("truncate-seconds", "S[,S..]", "also score with test utterances cut to these lengths"),
                list("buckets", "LO-HI[,..]", "test-duration buckets, e.g. 1-2,2-4,4-"),
                opt("offset", "start|random", "where truncated segments begin [default: start]"),
                opt("p-target", "P", "target prior of the detection cost [default: 0.01]"),
                opt("scores", "FILE", "write `enroll test score` lines"),
                opt("report", "FILE", "write the report here as well as to stdout"),
                workers(),
            ]),
        )
        .subcommand(
            sub("audit", "Count trainable parameters of model variants").args([
                Arg::new("names")
                    .value_name("VARIANT")
                    .num_args(0..)
                    .action(ArgAction::Append)
                    .help("variant names [default: the ten reference variants]"),
                list("variant", "NAME[,NAME..]", "more variant names"),
                list("expected-params", "MILLIONS[,..]", "reference totals aligned with the variants"),
                opt("classes", "K", "classifier outputs [default: 5994]"),
                list("stage-channels", "C[,C..]", "override the stage widths [default: 64,128,256]"),
                list("blocks-per-stage", "N[,N..]", "override the stage depths [default: 2,2,2]"),
                flag("breakdown", "print per-layer counts"),
            ]),
        )
        .subcommand(
            sub("gradcam", "Export a Grad-CAM heatmap of one utterance").args([
                opt("checkpoint", "FILE", "trained model"),
                opt("input", "FILE", "a WAV or feature file"),
                opt("manifest", "FILE", "manifest to look --id up in (instead of --input)"),
                opt("id", "UTT", "utterance id"),
                opt("layer", "NAME", "layer whose output is explained [default: block3]"),
                opt("target", "K", "class to explain [default: the predicted class]"),
                opt("format", "pgm|csv", "[default: pgm]"),
                opt("out", "FILE", "heatmap path"),
                flag("raw", "export the map at layer resolution instead of input resolution"),
            ]),
        )
        .subcommand(
            sub("truncate", "Cut every utterance to fixed lengths and store normalized features").args([
                opt("manifest", "FILE", "input manifest"),
                list("truncate-seconds", "S[,S..]", "segment lengths"),
                opt("out", "DIR", "one subdirectory with a manifest per length"),
                opt("offset", "start|random", "[default: start]"),
                opt("seed", "N", "seed for random offsets [default: 0]"),
                workers(),
            ]),
        )
}
