"""Command-line entry points.

Heavy imports live inside the command handlers so --threads can pin the
BLAS pool through the environment before numpy loads. Every command
resolves one RunConfig (defaults < file < env < flags), writes its outputs
under --out, and finishes with a manifest that records the config echo and
content hashes; pointing --config at a manifest re-runs that command.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

ABLATION_ARMS = ("full", "no_stage2", "ar", "single_stream", "no_rtd")


def _apply_threads_early(argv):
    """Pin BLAS threads before numpy is imported anywhere."""
    n = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    if n is None:
        return
    try:
        count = int(n)
    except ValueError:
        return  # argparse will reject it properly
    if count <= 0:
        return
    if "numpy" in sys.modules:
        import logging

        logging.getLogger(__name__).warning(
            "--threads: numpy already imported, thread cap may not apply"
        )
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(count)


def _add_common(p):
    p.add_argument("--config", help="config file or manifest to load")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS thread cap (set before numpy loads)")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="duetdiff",
        description="Conditional masked-diffusion accompaniment toy system",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic song dataset")
    _add_common(p)
    p.add_argument("--length", type=int, help="song length (default seq_len_stage2 + 16)")

    p = sub.add_parser("train", help="run the two-stage curriculum")
    _add_common(p)

    p = sub.add_parser("sample", help="generate accompaniments for vocal tracks")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/final.ckpt)")
    p.add_argument("--data", help="dataset file providing vocal tracks")
    p.add_argument(
        "--generate-vocals",
        type=int,
        metavar="N",
        help="synthesize N fresh vocal tracks instead of reading --data",
    )
    p.add_argument(
        "--condition",
        choices=("full", "zero_shot"),
        default="full",
        help="conditioning mode",
    )

    p = sub.add_parser("eval", help="run the schedule x steps metric grid")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/final.ckpt)")
    p.add_argument("--decoder", choices=("nar", "ar"), help="override decoding mode")

    p = sub.add_parser("ablate", help="train and score the ablation arms")
    _add_common(p)
    p.add_argument(
        "--arms",
        default=",".join(ABLATION_ARMS),
        help="comma-separated subset of: " + ", ".join(ABLATION_ARMS),
    )

    p = sub.add_parser("augment", help="EQ-randomize and loudness-normalize audio")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True, help="input audio file")
    p.add_argument("--format", choices=("wav", "raw"), default="wav")
    p.add_argument("--rate", type=int, default=48000, help="sample rate for raw input")
    p.add_argument("--p", type=float, help="override aug.p")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM wav output")

    return parser


def _resolve(args):
    from .config import resolve

    return resolve(
        config_path=args.config,
        cli_sets=args.set,
        seed=args.seed,
        out=args.out,
        threads=args.threads,
    )


def _out_dir(cfg):
    from pathlib import Path

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _synth_cfg(cfg):
    from .synthdata import SynthConfig

    return SynthConfig(epsilon=cfg["data.epsilon"])


def _model_cfg(cfg):
    from .model import PredictorConfig

    return PredictorConfig(
        dim=cfg["model.dim"],
        layers=cfg["model.layers"],
        heads=cfg["model.heads"],
        ffn_mult=cfg["model.ffn_mult"],
        max_dual_len=max(cfg["data.seq_len"], cfg["data.seq_len_stage2"]),
        single_stream=cfg["model.single_stream"],
    )


def _sampler_params(cfg):
    from .sampling import SamplerParams

    return SamplerParams(
        steps=cfg["sample.steps"],
        schedule=cfg["sample.schedule"],
        power_exponent=cfg["schedule.power_exponent"],
        top_k=cfg["sample.top_k"],
        top_p=cfg["sample.top_p"],
        temperature=cfg["sample.temperature"],
        mask_temperature=cfg["sample.mask_temperature"],
        guidance=cfg["sample.guidance"],
    )


def _eval_items(cfg, scfg, n=None, seq_len=None):
    """Held-out items drawn from a stream disjoint from training draws."""
    import numpy as np

    from .training import sample_training_item

    rng = np.random.default_rng(np.random.SeedSequence((cfg["data.seed"], 17)))
    n = cfg["eval.songs"] if n is None else n
    seq_len = cfg["data.seq_len_stage2"] if seq_len is None else seq_len
    return [sample_training_item(seq_len, scfg, rng) for _ in range(n)]


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    from .artifacts import write_manifest
    from .synthdata import make_dataset, write_dataset
    from .training import REF_LEN

    cfg = _resolve(args)
    out = _out_dir(cfg)
    scfg = _synth_cfg(cfg)
    length = args.length or cfg["data.seq_len_stage2"] + REF_LEN
    songs = make_dataset(cfg["data.songs"], length, scfg, cfg["data.seed"])
    path = out / "songs.txt"
    write_dataset(path, songs)
    write_manifest(
        out / "manifest.txt",
        "gen-data",
        cfg,
        outputs={"songs": path},
        extra={"songs": len(songs), "length": length},
    )
    print(f"wrote {len(songs)} songs to {path}")
    return EXIT_OK


def _build_trainer(cfg, model):
    from .schedules import LrSchedule, MaskSchedule
    from .training import Trainer, TrainerConfig

    total = cfg["lr.total_steps"] or (cfg["train.stage1_steps"] + cfg["train.stage2_steps"])
    tcfg = TrainerConfig(
        lam=cfg["train.lambda"],
        rho=cfg["rtd.rho"],
        rtd_mode=cfg["rtd.mode"],
        rtd_temperature=cfg["rtd.temperature"],
        dropout_p=cfg["cond.dropout_p"],
        clip_norm=cfg["train.clip_norm"],
        batch=cfg["train.batch"],
        accum=cfg["train.accum"],
        mode=cfg["train.mode"],
    )
    lr = LrSchedule(
        base_lr=cfg["lr.base"], warmup_steps=cfg["lr.warmup_steps"], total_steps=total
    )
    mask = MaskSchedule(
        kind=cfg["schedule.kind"], power_exponent=cfg["schedule.power_exponent"]
    )
    return Trainer(
        model, tcfg, lr_sched=lr, mask_sched=mask, seed=cfg["seed"], synth_cfg=_synth_cfg(cfg)
    )


def _train_run(cfg, out):
    """Shared by train and ablate; returns (model, loss lines, ckpt paths)."""
    from .artifacts import rng_state_text, save_checkpoint
    from .model import Predictor
    from .training import CurriculumStage, run_curriculum

    model = Predictor(_model_cfg(cfg), seed=cfg["seed"])
    trainer = _build_trainer(cfg, model)
    stages = []
    if cfg["train.stage1_steps"]:
        stages.append(
            CurriculumStage("stage1", cfg["data.seq_len"], cfg["train.stage1_steps"], False)
        )
    if cfg["train.stage2_steps"]:
        stages.append(
            CurriculumStage(
                "stage2", cfg["data.seq_len_stage2"], cfg["train.stage2_steps"], True
            )
        )
    lines = []
    ckpts = {}

    def log_fn(line):
        lines.append(line)

    def checkpoint_fn(stage_name, tr):
        path = out / f"{stage_name}.ckpt"
        save_checkpoint(
            path,
            tr.model,
            cfg,
            step=tr.step,
            stage=stage_name,
            sobol_index=tr.sobol.index,
            opt_step=tr.opt.step,
            rng_states={
                "corrupt": rng_state_text(tr.rng_corrupt),
                "dropout": rng_state_text(tr.rng_dropout),
                "rtd": rng_state_text(tr.rng_rtd),
            },
        )
        ckpts[stage_name] = path

    run_curriculum(trainer, stages, seed=cfg["seed"], log_fn=log_fn, checkpoint_fn=checkpoint_fn)
    final = out / "final.ckpt"
    save_checkpoint(
        final,
        model,
        cfg,
        step=trainer.step,
        stage="final",
        sobol_index=trainer.sobol.index,
        opt_step=trainer.opt.step,
        rng_states={
            "corrupt": rng_state_text(trainer.rng_corrupt),
            "dropout": rng_state_text(trainer.rng_dropout),
            "rtd": rng_state_text(trainer.rng_rtd),
        },
    )
    ckpts["final"] = final
    return model, lines, ckpts


def cmd_train(args):
    from .artifacts import write_manifest

    cfg = _resolve(args)
    out = _out_dir(cfg)
    model, lines, ckpts = _train_run(cfg, out)
    log_path = out / "loss_log.txt"
    with open(log_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    outputs = {"loss_log": log_path}
    outputs.update(ckpts)
    write_manifest(
        out / "manifest.txt",
        "train",
        cfg,
        outputs=outputs,
        extra={"params": model.count_params(), "steps": len(lines)},
    )
    tail = lines[-1] if lines else "(no steps)"
    print(f"trained {len(lines)} steps, {model.count_params()} params")
    print(tail)
    return EXIT_OK


def _load_checkpoint_model(args, cfg):
    from .artifacts import load_model

    path = args.checkpoint or str(_out_dir(cfg) / "final.ckpt")
    return load_model(path), path


def cmd_sample(args):
    import numpy as np

    from .artifacts import write_manifest
    from .evaluation import make_condition
    from .sampling import generate, ar_generate
    from .synthdata import read_dataset
    from .training import REF_LEN, sample_training_item

    cfg = _resolve(args)
    out = _out_dir(cfg)
    (model, header), ckpt_path = _load_checkpoint_model(args, cfg)
    scfg = _synth_cfg(cfg)
    params = _sampler_params(cfg)
    decoder = "ar" if header.get("config.train.mode", "mask").strip() == "ar" else "nar"

    items = []
    if args.generate_vocals:
        rng_data = np.random.default_rng(np.random.SeedSequence((cfg["data.seed"], 23)))
        items = [
            sample_training_item(cfg["data.seq_len_stage2"], scfg, rng_data)
            for _ in range(args.generate_vocals)
        ]
    elif args.data:
        from .corruption import TokenSeq
        from .synthdata import reference_snippet

        songs = read_dataset(args.data)
        for inst in songs:
            t = min(len(inst.vocals) - REF_LEN, cfg["data.seq_len_stage2"])
            if t <= 0:
                raise ValueError(
                    f"sample: songs in {args.data} are too short for a reference snippet"
                )
            rng_snip = np.random.default_rng(np.random.SeedSequence((cfg["seed"], inst.seed)))
            _, snippet = reference_snippet(inst, (0, t), REF_LEN, rng_snip)
            a0 = TokenSeq(
                inst.accomp[:t], scfg.n_acc, mask_id=scfg.mask_id, pad_id=scfg.pad_id
            )
            items.append(
                {"V": inst.vocals[:t], "A0seq": a0, "style": inst.style, "snippet": snippet}
            )
    else:
        raise ValueError("sample: provide --data or --generate-vocals")

    rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 31)))
    voc = np.stack([it["V"] for it in items])
    conds = [make_condition(it, args.condition) for it in items]
    if decoder == "ar":
        res = ar_generate(voc, conds, model, params, rng, scfg)
    else:
        res = generate(voc, conds, model, params, rng, scfg)

    path = out / "samples.txt"
    with open(path, "w", encoding="utf-8") as fh:
        for i, it in enumerate(items):
            v = ",".join(str(x) for x in it["V"])
            a = ",".join(str(x) for x in res.tokens[i])
            fh.write(
                f"song={i} condition={args.condition} style={it['style']} V={v} A={a}\n"
            )
    write_manifest(
        out / "manifest.txt",
        "sample",
        cfg,
        outputs={"samples": path},
        extra={
            "checkpoint": ckpt_path,
            "songs": len(items),
            "model_calls": res.model_calls,
            "decoder": decoder,
        },
    )
    print(f"wrote {len(items)} samples to {path} ({res.model_calls} model calls)")
    return EXIT_OK


def cmd_eval(args):
    from .artifacts import write_manifest
    from .evaluation import run_suite, write_reports

    cfg = _resolve(args)
    out = _out_dir(cfg)
    (model, header), ckpt_path = _load_checkpoint_model(args, cfg)
    scfg = _synth_cfg(cfg)
    decoder = args.decoder or (
        "ar" if header.get("config.train.mode", "mask").strip() == "ar" else "nar"
    )
    items = _eval_items(cfg, scfg)
    reports = run_suite(
        model,
        items,
        conditions=("full", "zero_shot"),
        schedules=("cosine", "linear", "power"),
        steps_list=(1, 5, 20, 60),
        base_params=_sampler_params(cfg),
        scfg=scfg,
        seed=cfg["seed"],
        out_dir=out,
        decoder=decoder,
    )
    write_manifest(
        out / "manifest.txt",
        "eval",
        cfg,
        outputs={
            "report_txt": out / "report.txt",
            "report_csv": out / "report.csv",
            "curves": out / "curves.txt",
        },
        extra={"checkpoint": ckpt_path, "rows": len(reports), "decoder": decoder},
    )
    for rep in reports:
        print(rep.to_line())
    return EXIT_OK


ARM_OVERRIDES = {
    "full": {},
    "no_stage2": {"train.stage2_steps": 0},
    "ar": {"train.mode": "ar"},
    "single_stream": {"model.single_stream": True},
    "no_rtd": {"train.lambda": 0.0},
}


def cmd_ablate(args):
    import csv

    from .artifacts import write_manifest
    from .evaluation import evaluate_generation
    import numpy as np

    cfg = _resolve(args)
    out = _out_dir(cfg)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    unknown = sorted(set(arms) - set(ABLATION_ARMS))
    if unknown:
        raise ValueError(f"ablate: unknown arms {unknown}; choose from {ABLATION_ARMS}")

    scfg = _synth_cfg(cfg)
    rows = []
    for arm in arms:
        arm_cfg = cfg
        for key, v in ARM_OVERRIDES[arm].items():
            arm_cfg = arm_cfg.replace(**{key.replace(".", "__"): v})
        arm_out = out / arm
        arm_out.mkdir(parents=True, exist_ok=True)
        model, lines, ckpts = _train_run(arm_cfg, arm_out)
        with open(arm_out / "loss_log.txt", "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
        decoder = "ar" if arm_cfg["train.mode"] == "ar" else "nar"
        items = _eval_items(arm_cfg, scfg)
        rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 47)))
        rep = evaluate_generation(
            model, items, "full", _sampler_params(arm_cfg), scfg, rng, decoder=decoder
        )
        rows.append((arm, rep))
        print(f"arm={arm} {rep.to_line()}")

    csv_path = out / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        from .evaluation import CSV_COLUMNS

        writer.writerow(["arm"] + CSV_COLUMNS)
        for arm, rep in rows:
            writer.writerow([arm] + rep.to_csv_row())
    txt_path = out / "ablation.txt"
    with open(txt_path, "w", encoding="utf-8") as fh:
        for arm, rep in rows:
            fh.write(f"arm={arm} {rep.to_line()}\n")
    write_manifest(
        out / "manifest.txt",
        "ablate",
        cfg,
        outputs={"ablation_csv": csv_path, "ablation_txt": txt_path},
        extra={"arms": ",".join(arms)},
    )
    return EXIT_OK


def cmd_augment(args):
    import numpy as np

    from .artifacts import write_manifest
    from .audio_aug import maybe_augment, read_raw, read_wav, write_raw, write_wav

    cfg = _resolve(args)
    out = _out_dir(cfg)
    p = cfg["aug.p"] if args.p is None else args.p
    if args.format == "raw":
        buf = read_raw(args.in_path, args.rate)
    else:
        buf = read_wav(args.in_path)
    rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 53)))
    result, applied, params = maybe_augment(buf, p, rng)

    stem = os.path.splitext(os.path.basename(args.in_path))[0]
    if args.format == "raw":
        out_path = out / f"{stem}_aug.raw"
        write_raw(out_path, result)
    else:
        out_path = out / f"{stem}_aug.wav"
        write_wav(out_path, result, pcm16=args.pcm16)
    log_path = out / f"{stem}_aug_params.txt"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"applied={applied}\n")
        if params is not None:
            fh.write(params.to_line() + "\n")
    write_manifest(
        out / "manifest.txt",
        "augment",
        cfg,
        outputs={"audio": out_path, "params": log_path},
        extra={"input": args.in_path, "applied": applied},
    )
    print(f"wrote {out_path} (eq applied: {applied})")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "augment": cmd_augment,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_threads_early(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"duetdiff {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"duetdiff {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
