//! Pipeline stages. Each stage reads artifacts under the output directory,
//! writes its own, and records a manifest in `manifests/`.
//!
//! ```text
//! data/         train.tsv valid.tsv test.tsv semantic_emb.txt
//! embeddings/   collab_emb.txt
//! index/        codes_{ceid,seid}.tsv rqvae_{ceid,seid}.{bin,manifest} vocab.tsv templates.txt
//! scorers/      {ceid,seid}_tNN.txt
//! lists/        {ceid,seid}.jsonl
//! rerank/       final_<mode>.jsonl breakdown_<mode>.tsv
//! eval/         metrics.csv metrics_ablation.csv metrics_templates.csv
//! analysis/     per_matrix_{ceid,seid}.csv chr.csv
//! sweep/        template_sweep.csv
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use rayon::prelude::*;

use multidex::collab::train_collaborative_embeddings;
use multidex::dataio::{
    kcore_filter, leave_one_out_split, load_embedding_matrix, load_interactions, EmbeddingMatrix, EmbeddingSource,
    InteractionDataset, SplitDataset,
};
use multidex::metrics::{accuracy_rows, chr_avg, hit_at_k, hit_set, ndcg_at_k, per_matrix, HitSet, MetricRow};
use multidex::rerank::{fuse_and_rank, write_breakdown, FusionMode, BREAKDOWN_HEADER};
use multidex::retrieval::{beam_search_constrained, load_lists, save_lists};
use multidex::rqvae::{assign_codes, resolve_collisions, save_checkpoint, train_rqvae};
use multidex::scorer::MarkovScorer;
use multidex::synthetic;
use multidex::vocab::{build_prefix_trie, build_vocabulary, render_prompt, TokenVocab, TEMPLATES_RESOURCE};
use multidex::{IndexType, ItemCodeTable, ListKind, RankedList};

use crate::config::PipelineConfig;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    EmbedCollab,
    BuildIndex,
    TrainScorers,
    Retrieve,
    Rerank,
    Evaluate,
    Analyze,
    Sweep,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Prepare,
        Stage::EmbedCollab,
        Stage::BuildIndex,
        Stage::TrainScorers,
        Stage::Retrieve,
        Stage::Rerank,
        Stage::Evaluate,
        Stage::Analyze,
        Stage::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::EmbedCollab => "embed-collab",
            Stage::BuildIndex => "build-index",
            Stage::TrainScorers => "train-scorers",
            Stage::Retrieve => "retrieve",
            Stage::Rerank => "rerank",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| anyhow!("unknown stage `{s}`"))
    }
}

/// Artifact paths under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, dir: &str, name: &str) -> PathBuf {
        self.root.join(dir).join(name)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn raw_interactions(&self) -> PathBuf {
        self.file("data", "interactions.tsv")
    }
    pub fn raw_semantic(&self) -> PathBuf {
        self.file("data", "semantic_input.txt")
    }
    pub fn split_files(&self) -> [PathBuf; 3] {
        ["train.tsv", "valid.tsv", "test.tsv"].map(|n| self.file("data", n))
    }
    pub fn semantic(&self) -> PathBuf {
        self.file("data", "semantic_emb.txt")
    }
    pub fn collab(&self) -> PathBuf {
        self.file("embeddings", "collab_emb.txt")
    }
    pub fn embeddings(&self, t: IndexType) -> PathBuf {
        match t {
            IndexType::Ceid => self.collab(),
            IndexType::Seid => self.semantic(),
        }
    }
    pub fn codes(&self, t: IndexType) -> PathBuf {
        self.file("index", &format!("codes_{t}.tsv"))
    }
    pub fn rqvae_stem(&self, t: IndexType) -> PathBuf {
        self.file("index", &format!("rqvae_{t}"))
    }
    pub fn vocab(&self) -> PathBuf {
        self.file("index", "vocab.tsv")
    }
    pub fn templates(&self) -> PathBuf {
        self.file("index", "templates.txt")
    }
    pub fn scorer(&self, t: IndexType, template: usize) -> PathBuf {
        self.file("scorers", &format!("{t}_t{template:02}.txt"))
    }
    pub fn lists(&self, t: IndexType) -> PathBuf {
        self.file("lists", &format!("{t}.jsonl"))
    }
    pub fn final_lists(&self, mode: FusionMode) -> PathBuf {
        self.file("rerank", &format!("final_{mode}.jsonl"))
    }
    pub fn breakdown(&self, mode: FusionMode) -> PathBuf {
        self.file("rerank", &format!("breakdown_{mode}.tsv"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.file("eval", "metrics.csv")
    }
    pub fn ablation(&self) -> PathBuf {
        self.file("eval", "metrics_ablation.csv")
    }
    pub fn template_metrics(&self) -> PathBuf {
        self.file("eval", "metrics_templates.csv")
    }
    pub fn per_matrix(&self, t: IndexType) -> PathBuf {
        self.file("analysis", &format!("per_matrix_{t}.csv"))
    }
    pub fn chr(&self) -> PathBuf {
        self.file("analysis", "chr.csv")
    }
    pub fn sweep(&self) -> PathBuf {
        self.file("sweep", "template_sweep.csv")
    }
    pub fn manifest(&self, name: &str) -> PathBuf {
        self.file("manifests", &format!("{name}.json"))
    }
}

/// Runs stages against one config and output directory.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    notes: Vec<String>,
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        bail!("missing {}: run `multidex {stage}` first", path.display())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn metric_lines(prefix: &str, rows: &[MetricRow], out: &mut String) {
    for r in rows {
        writeln!(out, "{prefix}{},{},{}", r.metric, r.k, r.value).expect("write to String");
    }
}

fn check_ndcg_le_hit(rows: &[MetricRow]) -> Result<()> {
    for k in rows.iter().map(|r| r.k) {
        let get = |m: &str| rows.iter().find(|r| r.k == k && r.metric == m).map(|r| r.value);
        if let (Some(h), Some(n)) = (get("hit"), get("ndcg")) {
            if n > h + 1e-12 {
                bail!("NDCG@{k} = {n} exceeds Hit@{k} = {h}");
            }
        }
    }
    Ok(())
}

/// A user's fused list with the per-item score breakdown.
pub type FusedUser = (RankedList, Vec<multidex::rerank::SelfConsistencyScore>);

/// One user's lists of both types restricted to templates `1..=max_template`.
type UserLists = BTreeMap<String, (Vec<RankedList>, Vec<RankedList>)>;

fn group_by_user(ceid: &[RankedList], seid: &[RankedList], max_template: usize) -> UserLists {
    let mut out: UserLists = BTreeMap::new();
    for (lists, side) in [(ceid, 0), (seid, 1)] {
        for l in lists.iter().filter(|l| l.template.is_some_and(|t| t <= max_template)) {
            let entry = out.entry(l.user.clone()).or_default();
            if side == 0 {
                entry.0.push(l.clone());
            } else {
                entry.1.push(l.clone());
            }
        }
    }
    out
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.output_dir());
        Ok(Self {
            cfg,
            layout,
            notes: Vec::new(),
        })
    }

    /// Messages collected while running (counts, dropped rows and so on).
    pub fn take_notes(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notes)
    }

    fn note(&mut self, msg: String) {
        self.notes.push(msg);
    }

    fn record(&self, name: &str, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let m = RunManifest::build(name, &self.layout.root, self.cfg.seed()?, self.cfg.snapshot(), inputs, outputs)?;
        let path = self.layout.manifest(name);
        ensure_parent(&path)?;
        m.save(&path)
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Prepare => self.prepare(),
            Stage::EmbedCollab => self.embed_collab(),
            Stage::BuildIndex => self.build_index(),
            Stage::TrainScorers => self.train_scorers(),
            Stage::Retrieve => self.retrieve(),
            Stage::Rerank => self.rerank(),
            Stage::Evaluate => self.evaluate(),
            Stage::Analyze => self.analyze(),
            Stage::Sweep => self.sweep(),
        }
        .with_context(|| format!("stage {stage} failed"))
    }

    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    fn load_split(&self) -> Result<SplitDataset> {
        for p in self.layout.split_files() {
            require(&p, Stage::Prepare)?;
        }
        Ok(SplitDataset::load(&self.layout.data_dir())?)
    }

    fn load_tables(&self) -> Result<(ItemCodeTable, ItemCodeTable, TokenVocab)> {
        let mut tables = Vec::new();
        for t in IndexType::ALL {
            require(&self.layout.codes(t), Stage::BuildIndex)?;
            tables.push(ItemCodeTable::load(&self.layout.codes(t), t)?);
        }
        let vocab = build_vocabulary(&[&tables[0], &tables[1]])?;
        let seid = tables.pop().expect("two tables");
        let ceid = tables.pop().expect("two tables");
        Ok((ceid, seid, vocab))
    }

    fn load_type_lists(&self) -> Result<(Vec<RankedList>, Vec<RankedList>)> {
        for t in IndexType::ALL {
            require(&self.layout.lists(t), Stage::Retrieve)?;
        }
        Ok((
            load_lists(&self.layout.lists(IndexType::Ceid))?,
            load_lists(&self.layout.lists(IndexType::Seid))?,
        ))
    }

    pub fn prepare(&mut self) -> Result<()> {
        let l = self.layout.clone();
        fs::create_dir_all(l.data_dir())?;
        let (interactions_path, semantic_path) = if self.cfg.synthetic()? {
            let data = synthetic::generate(&self.cfg.synthetic_config()?)?;
            data.interactions.save(&l.raw_interactions())?;
            data.semantic.save(&l.raw_semantic())?;
            (l.raw_interactions(), l.raw_semantic())
        } else {
            (
                self.cfg.interactions_path().expect("validated"),
                self.cfg.semantic_path().expect("validated"),
            )
        };
        let (ds, report) = load_interactions(&interactions_path)?;
        if report.malformed > 0 {
            self.note(format!("prepare: skipped {} malformed interaction lines", report.malformed));
        }
        let semantic = load_embedding_matrix(&semantic_path, EmbeddingSource::Semantic)?;

        let known: InteractionDataset = InteractionDataset::from_records(ds.sequences.iter().flat_map(|(u, seq)| {
            seq.iter()
                .filter(|it| semantic.row(&it.item).is_some())
                .map(move |it| (u.clone(), it.item.clone(), it.timestamp))
        }));
        let dropped = ds.num_interactions() - known.num_interactions();
        if dropped > 0 {
            self.note(format!("prepare: dropped {dropped} interactions with items lacking semantic embeddings"));
        }
        let core = kcore_filter(&known, self.cfg.kcore()?);
        if core.is_empty() {
            bail!("no interactions survive {}-core filtering", self.cfg.kcore()?);
        }
        let (split, excluded) = leave_one_out_split(&core, self.cfg.max_len()?);
        if !excluded.is_empty() {
            self.note(format!("prepare: excluded {} users with fewer than 3 interactions", excluded.len()));
        }
        split.save(&l.data_dir())?;
        let items: Vec<&String> = core.items.iter().collect();
        semantic.select(&items)?.save(&l.semantic())?;
        self.note(format!(
            "prepare: {} users, {} items, {} interactions after filtering",
            core.users.len(),
            core.items.len(),
            core.num_interactions()
        ));

        let [train, valid, test] = l.split_files();
        let sem = l.semantic();
        self.record(
            "prepare",
            &[&interactions_path, &semantic_path],
            &[&train, &valid, &test, &sem],
        )
    }

    pub fn embed_collab(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let split = self.load_split()?;
        require(&l.semantic(), Stage::Prepare)?;
        let universe = load_embedding_matrix(&l.semantic(), EmbeddingSource::Semantic)?;
        let trained = train_collaborative_embeddings(&split, &self.cfg.collab_config()?)?;

        // Items never seen in training get the mean trained embedding.
        let mean = trained.values().mean_axis(ndarray::Axis(0)).expect("non-empty");
        let ids = universe.ids().to_vec();
        let mut values = Array2::zeros((ids.len(), trained.dim()));
        let mut cold = 0;
        for (r, id) in ids.iter().enumerate() {
            match trained.row(id) {
                Some(row) => values.row_mut(r).assign(&row),
                None => {
                    values.row_mut(r).assign(&mean);
                    cold += 1;
                }
            }
        }
        if cold > 0 {
            self.note(format!("embed-collab: {cold} items absent from train use the mean embedding"));
        }
        let out = l.collab();
        ensure_parent(&out)?;
        EmbeddingMatrix::new(EmbeddingSource::Collaborative, ids, values)?.save(&out)?;
        let [train, valid, test] = l.split_files();
        let sem = l.semantic();
        self.record("embed-collab", &[&train, &valid, &test, &sem], &[&out])
    }

    pub fn build_index(&mut self) -> Result<()> {
        let l = self.layout.clone();
        require(&l.semantic(), Stage::Prepare)?;
        require(&l.collab(), Stage::EmbedCollab)?;
        let jobs: Vec<(IndexType, EmbeddingMatrix)> = IndexType::ALL
            .into_iter()
            .map(|t| {
                let source = match t {
                    IndexType::Ceid => EmbeddingSource::Collaborative,
                    IndexType::Seid => EmbeddingSource::Semantic,
                };
                Ok((t, load_embedding_matrix(&l.embeddings(t), source)?))
            })
            .collect::<Result<_>>()?;
        let cfgs = IndexType::ALL
            .into_iter()
            .map(|t| self.cfg.rqvae_config(t))
            .collect::<Result<Vec<_>>>()?;
        let built: Vec<(IndexType, ItemCodeTable, usize)> = jobs
            .par_iter()
            .zip(cfgs.par_iter())
            .map(|((t, emb), cfg)| -> Result<_> {
                let model = train_rqvae(emb, cfg)?;
                let meta = [
                    ("index_type".to_string(), t.to_string()),
                    ("seed".to_string(), cfg.seed.to_string()),
                    ("epochs".to_string(), cfg.epochs.to_string()),
                ];
                let stem = l.rqvae_stem(*t);
                ensure_parent(&stem)?;
                save_checkpoint(&model, &stem, &meta)?;
                let raw = assign_codes(&model, emb)?;
                let distinct: std::collections::BTreeSet<&Vec<u32>> = raw.values().collect();
                let colliding = raw.len() - distinct.len();
                Ok((*t, resolve_collisions(*t, &raw)?, colliding))
            })
            .collect::<Result<_>>()?;
        for (t, table, colliding) in &built {
            table.save(&l.codes(*t))?;
            self.note(format!(
                "build-index: {t} table has {} items, {colliding} beyond the first in a shared prefix",
                table.len()
            ));
        }
        let vocab = build_vocabulary(&[&built[0].1, &built[1].1])?;
        vocab.save(&l.vocab())?;
        write_text(&l.templates(), TEMPLATES_RESOURCE)?;

        let (cc, sc) = (l.codes(IndexType::Ceid), l.codes(IndexType::Seid));
        let (cb, sb) = (l.rqvae_stem(IndexType::Ceid).with_extension("bin"), l.rqvae_stem(IndexType::Seid).with_extension("bin"));
        let (collab, sem, voc, tpl) = (l.collab(), l.semantic(), l.vocab(), l.templates());
        self.record("build-index", &[&collab, &sem], &[&cc, &sc, &cb, &sb, &voc, &tpl])
    }

    pub fn train_scorers(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let split = self.load_split()?;
        let (ceid, seid, vocab) = self.load_tables()?;
        let scfg = self.cfg.scorer_config()?;
        let count = self.cfg.template_count()?;
        let streams: Vec<(IndexType, &ItemCodeTable, Vec<Vec<u32>>)> = [(IndexType::Ceid, &ceid), (IndexType::Seid, &seid)]
            .into_iter()
            .map(|(t, table)| {
                let s = split
                    .train
                    .values()
                    .map(|items| vocab.history_tokens(table, items))
                    .collect::<multidex::Result<Vec<_>>>()?;
                Ok((t, table, s))
            })
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..streams.len()).flat_map(|s| (1..=count).map(move |t| (s, t))).collect();
        let outputs: Vec<PathBuf> = jobs
            .par_iter()
            .map(|&(s, template)| -> Result<PathBuf> {
                let (t, _, ref st) = streams[s];
                let model = MarkovScorer::train(t, &vocab, st, template, scfg)?;
                let path = l.scorer(t, template);
                ensure_parent(&path)?;
                model.save(&vocab, &path)?;
                Ok(path)
            })
            .collect::<Result<_>>()?;
        let [train, valid, test] = l.split_files();
        let (cc, sc) = (l.codes(IndexType::Ceid), l.codes(IndexType::Seid));
        let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
        self.record("train-scorers", &[&train, &valid, &test, &cc, &sc], &outs)
    }

    pub fn retrieve(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let split = self.load_split()?;
        let (ceid, seid, vocab) = self.load_tables()?;
        let count = self.cfg.template_count()?;
        let (k, width, max_len) = (self.cfg.retrieval_k()?, self.cfg.beam_width()?, self.cfg.max_len()?);
        let users: Vec<&str> = split.users().collect();
        let mut inputs = vec![l.codes(IndexType::Ceid), l.codes(IndexType::Seid)];
        for (t, table) in [(IndexType::Ceid, &ceid), (IndexType::Seid, &seid)] {
            let trie = build_prefix_trie(table, &vocab)?;
            let mut lists = Vec::with_capacity(count * users.len());
            for template in 1..=count {
                let path = l.scorer(t, template);
                require(&path, Stage::TrainScorers)?;
                let scorer = MarkovScorer::load(&vocab, &path)?;
                inputs.push(path);
                let batch: Vec<RankedList> = users
                    .par_iter()
                    .map(|&user| -> Result<RankedList> {
                        let history = split
                            .test_context(user, max_len)
                            .ok_or_else(|| anyhow!("user {user} lacks train or valid items"))?;
                        let prompt = render_prompt(user, &history, table, &vocab, template)?;
                        let entries = beam_search_constrained(&scorer, &trie, &prompt.tokens, k, width)?;
                        Ok(RankedList {
                            user: user.to_string(),
                            index_type: ListKind::from(t),
                            template: Some(template),
                            entries,
                        })
                    })
                    .collect::<Result<_>>()?;
                lists.extend(batch);
            }
            let out = l.lists(t);
            ensure_parent(&out)?;
            save_lists(&lists, &out)?;
        }
        let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let (lc, ls) = (l.lists(IndexType::Ceid), l.lists(IndexType::Seid));
        self.record("retrieve", &ins, &[&lc, &ls])
    }

    /// Fuses every user's lists under `mode`, using templates `1..=templates`.
    pub fn fuse_all(
        &self,
        grouped: &UserLists,
        mode: FusionMode,
    ) -> Result<Vec<FusedUser>> {
        let params = self.cfg.fusion_params(mode)?;
        let users: Vec<_> = grouped.iter().collect();
        users
            .par_iter()
            .map(|(user, (c, s))| {
                let fused = fuse_and_rank(user, c, s, &params)?;
                Ok((fused.list, fused.scores))
            })
            .collect()
    }

    pub fn rerank(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let mode = self.cfg.mode()?;
        let (ceid, seid) = self.load_type_lists()?;
        let grouped = group_by_user(&ceid, &seid, self.cfg.template_count()?);
        let fused = self.fuse_all(&grouped, mode)?;
        let mut breakdown = Vec::new();
        breakdown.extend_from_slice(BREAKDOWN_HEADER.as_bytes());
        breakdown.push(b'\n');
        for (list, scores) in &fused {
            write_breakdown(&list.user, scores, &mut breakdown)?;
        }
        let lists: Vec<RankedList> = fused.into_iter().map(|(list, _)| list).collect();
        let (out, bd) = (l.final_lists(mode), l.breakdown(mode));
        ensure_parent(&out)?;
        save_lists(&lists, &out)?;
        fs::write(&bd, breakdown)?;
        let (lc, ls) = (l.lists(IndexType::Ceid), l.lists(IndexType::Seid));
        self.record(&format!("rerank_{mode}"), &[&lc, &ls], &[&out, &bd])
    }

    pub fn evaluate(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let mode = self.cfg.mode()?;
        let split = self.load_split()?;
        let final_path = l.final_lists(mode);
        require(&final_path, Stage::Rerank)?;
        let finals = load_lists(&final_path)?;
        let ks = self.cfg.eval_ks()?;

        let rows = accuracy_rows(&finals, &split.test, &ks)?;
        check_ndcg_le_hit(&rows)?;
        let missing = hit_at_k(&finals, &split.test, ks[0])?.missing;
        if !missing.is_empty() {
            self.note(format!("evaluate: {} users without a final list count as misses", missing.len()));
        }
        let mut text = String::from("metric,K,value\n");
        metric_lines("", &rows, &mut text);
        write_text(&l.metrics(), &text)?;

        let (ceid, seid) = self.load_type_lists()?;
        let grouped = group_by_user(&ceid, &seid, self.cfg.template_count()?);
        let mut ablation = String::from("mode,metric,K,value\n");
        for m in FusionMode::ALL {
            let lists: Vec<RankedList> = self.fuse_all(&grouped, m)?.into_iter().map(|(l, _)| l).collect();
            let rows = accuracy_rows(&lists, &split.test, &ks)?;
            check_ndcg_le_hit(&rows)?;
            metric_lines(&format!("{m},"), &rows, &mut ablation);
        }
        write_text(&l.ablation(), &ablation)?;

        let mut per_template = String::from("index_type,template,metric,K,value\n");
        for (t, lists) in [(IndexType::Ceid, &ceid), (IndexType::Seid, &seid)] {
            for template in 1..=self.cfg.template_count()? {
                let sub: Vec<RankedList> = lists.iter().filter(|x| x.template == Some(template)).cloned().collect();
                let rows = accuracy_rows(&sub, &split.test, &ks)?;
                check_ndcg_le_hit(&rows)?;
                metric_lines(&format!("{t},{template},"), &rows, &mut per_template);
            }
        }
        write_text(&l.template_metrics(), &per_template)?;

        let [_, _, test] = l.split_files();
        let (lc, ls) = (l.lists(IndexType::Ceid), l.lists(IndexType::Seid));
        let (m, a, tm) = (l.metrics(), l.ablation(), l.template_metrics());
        self.record("evaluate", &[&test, &final_path, &lc, &ls], &[&m, &a, &tm])
    }

    fn hit_sets(&self, lists: &[RankedList], test: &BTreeMap<String, String>) -> Result<Vec<HitSet>> {
        let k = self.cfg.analysis_k()?;
        Ok((1..=self.cfg.template_count()?)
            .map(|t| {
                let sub: Vec<RankedList> = lists.iter().filter(|x| x.template == Some(t)).cloned().collect();
                hit_set(&sub, test, k, t)
            })
            .collect())
    }

    pub fn analyze(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let split = self.load_split()?;
        let (ceid, seid) = self.load_type_lists()?;
        let hc = self.hit_sets(&ceid, &split.test)?;
        let hs = self.hit_sets(&seid, &split.test)?;
        for (t, sets) in [(IndexType::Ceid, &hc), (IndexType::Seid, &hs)] {
            let m = per_matrix(sets)?;
            if m.cells.iter().flatten().any(Option::is_none) {
                self.note(format!("analyze: {t} has templates without hits; their PER rows are empty"));
            }
            let mut buf = Vec::new();
            m.write_csv(&mut buf)?;
            write_text(&l.per_matrix(t), std::str::from_utf8(&buf)?)?;
        }
        let mut chr = String::from("from,to,value\n");
        for (a, b, x, y) in [("ceid", "seid", &hc, &hs), ("seid", "ceid", &hs, &hc)] {
            let v = chr_avg(x, y).map(|v| v.to_string()).unwrap_or_default();
            writeln!(chr, "{a},{b},{v}")?;
        }
        write_text(&l.chr(), &chr)?;
        let [_, _, test] = l.split_files();
        let (lc, ls) = (l.lists(IndexType::Ceid), l.lists(IndexType::Seid));
        let (pc, ps, c) = (l.per_matrix(IndexType::Ceid), l.per_matrix(IndexType::Seid), l.chr());
        self.record("analyze", &[&test, &lc, &ls], &[&pc, &ps, &c])
    }

    /// Fused accuracy when only templates `1..=n` are used, for every `n`.
    pub fn sweep(&mut self) -> Result<()> {
        let l = self.layout.clone();
        let split = self.load_split()?;
        let (ceid, seid) = self.load_type_lists()?;
        let ks = self.cfg.eval_ks()?;
        let mut text = String::from("templates,metric,K,value\n");
        for n in 2..=self.cfg.template_count()? {
            let grouped = group_by_user(&ceid, &seid, n);
            let lists: Vec<RankedList> = self
                .fuse_all(&grouped, FusionMode::Full)?
                .into_iter()
                .map(|(l, _)| l)
                .collect();
            for &k in &ks {
                writeln!(text, "{n},hit,{k},{}", hit_at_k(&lists, &split.test, k)?.value)?;
                writeln!(text, "{n},ndcg,{k},{}", ndcg_at_k(&lists, &split.test, k)?.value)?;
            }
        }
        write_text(&l.sweep(), &text)?;
        let [_, _, test] = l.split_files();
        let (lc, ls, out) = (l.lists(IndexType::Ceid), l.lists(IndexType::Seid), l.sweep());
        self.record("sweep", &[&test, &lc, &ls], &[&out])
    }
}
