//! `neref`: generate synthetic water scenes, train refractive fields on
//! them, and evaluate or render the results.

mod common;
mod error;
mod eval;
mod gen_scene;
mod manifest;
mod render;
mod sweep;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "neref", version, about = "Refractive water-surface reconstruction from optical flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene: pattern, per-camera images, depth, normals and warps.
    GenScene(gen_scene::GenSceneArgs),
    /// Fit a field to the warps of a scene.
    Train(train::TrainArgs),
    /// Score a checkpoint against a scene's ground truth.
    Eval(eval::EvalArgs),
    /// Render a checkpoint from a scene camera or a free viewpoint.
    Render(render::RenderArgs),
    /// Retrain over camera counts or flow-noise amplitudes.
    Sweep(sweep::SweepArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenScene(a) => gen_scene::run(a).map(Some),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a).map(Some),
        Command::Render(a) => render::run(a).map(Some),
        Command::Sweep(a) => sweep::run(a).map(Some),
    };
    match result {
        Ok(Some(dir)) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
