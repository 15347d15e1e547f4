//! `--config FILE` plus one `--<key> VALUE` flag per configuration key. Flags win over the
//! file, the file wins over defaults.

use std::path::PathBuf;

use clap::{value_parser, Arg, ArgMatches, Args, Command, FromArgMatches};
use dlsm::config::{ModelConfig, KEYS};
use dlsm::Result;

#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub file: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.file {
            Some(path) => ModelConfig::from_file(path)?,
            None => ModelConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut args = ConfigArgs::default();
        args.update_from_arg_matches(m)?;
        Ok(args)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        if let Some(path) = m.get_one::<PathBuf>("config") {
            self.file = Some(path.clone());
        }
        for key in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.overrides.retain(|(k, _)| k != key);
                self.overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let defaults = ModelConfig::default();
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("Configuration file of `key = value` lines"),
        );
        KEYS.iter().fold(cmd, |cmd, &key| {
            cmd.arg(
                Arg::new(key)
                    .long(key)
                    .value_name("VALUE")
                    .help_heading("Model configuration")
                    .help(format!("default: {}", defaults.get(key).expect("known key"))),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
