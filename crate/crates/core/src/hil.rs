//! Hardware-in-the-loop bridge: per-tick request/reply over UDP.
//!
//! The simulator sends a [`TickFrame`] each tick and waits for the
//! [`ParamFrame`] carrying the same sequence number. Both frames are fixed
//! size, little-endian and start with the magic bytes `VSG1`.

use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controllers::{ControllerKind, Observation, VirtualParams, VsgController};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VSG1";
pub const TICK_FRAME_LEN: usize = 40;
pub const PARAM_FRAME_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickFrame {
    pub seq: u32,
    pub t: f64,
    pub delta_f: f64,
    pub rocof: f64,
    pub dp_res: f64,
}

/// Controller reply. An all-zero parameter set means the ESS path is off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamFrame {
    pub seq: u32,
    pub k_v: f64,
    pub d_v: f64,
    pub r_v: f64,
}

fn header(buf: &[u8], len: usize, what: &str) -> Result<u32> {
    if buf.len() != len {
        return Err(Error::MalformedFrame(format!("{what} must be {len} bytes, got {}", buf.len())));
    }
    if buf[..4] != MAGIC {
        return Err(Error::MalformedFrame(format!("bad magic {:02x?}", &buf[..4])));
    }
    Ok(u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")))
}

fn f64_at(buf: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"))
}

impl TickFrame {
    pub fn encode(&self) -> [u8; TICK_FRAME_LEN] {
        let mut b = [0u8; TICK_FRAME_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        for (i, v) in [self.t, self.delta_f, self.rocof, self.dp_res].iter().enumerate() {
            b[8 + 8 * i..16 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let seq = header(buf, TICK_FRAME_LEN, "tick frame")?;
        Ok(Self { seq, t: f64_at(buf, 8), delta_f: f64_at(buf, 16), rocof: f64_at(buf, 24), dp_res: f64_at(buf, 32) })
    }

    pub fn observation(&self) -> Observation {
        Observation { t: self.t, delta_f: self.delta_f, rocof: self.rocof, dp_res: self.dp_res }
    }
}

impl ParamFrame {
    pub fn new(seq: u32, vp: Option<VirtualParams>) -> Self {
        let vp = vp.unwrap_or(VirtualParams::new(0.0, 0.0, 0.0));
        Self { seq, k_v: vp.k_v, d_v: vp.d_v, r_v: vp.r_v }
    }

    pub fn encode(&self) -> [u8; PARAM_FRAME_LEN] {
        let mut b = [0u8; PARAM_FRAME_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        for (i, v) in [self.k_v, self.d_v, self.r_v].iter().enumerate() {
            b[8 + 8 * i..16 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let seq = header(buf, PARAM_FRAME_LEN, "param frame")?;
        Ok(Self { seq, k_v: f64_at(buf, 8), d_v: f64_at(buf, 16), r_v: f64_at(buf, 24) })
    }

    /// Parameters re-clamped into the adaptive ranges, or `None` for "ESS off".
    /// Non-finite payloads are rejected.
    pub fn params(&self) -> Result<Option<VirtualParams>> {
        let vp = VirtualParams::new(self.k_v, self.d_v, self.r_v);
        if [vp.k_v, vp.d_v, vp.r_v].iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedFrame(format!("non-finite parameters in reply {}", self.seq)));
        }
        if vp.k_v == 0.0 && vp.d_v == 0.0 && vp.r_v == 0.0 {
            return Ok(None);
        }
        Ok(Some(vp.clamped()))
    }
}

/// Test hooks for the server side.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ServeOptions {
    /// Delay added before every reply.
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub answered: u64,
    pub malformed: u64,
}

/// Controller endpoint. Owns the controller; state advances once per frame.
pub struct HilServer {
    socket: UdpSocket,
    controller: Box<dyn VsgController>,
    stop: Arc<AtomicBool>,
    opts: ServeOptions,
    stats: ServerStats,
}

const POLL: Duration = Duration::from_millis(50);

impl HilServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, controller: Box<dyn VsgController>, opts: ServeOptions) -> Result<Self> {
        if controller.kind() == ControllerKind::Remote {
            return Err(Error::Config("cannot serve a remote controller".into()));
        }
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(POLL))?;
        Ok(Self { socket, controller, stop: Arc::new(AtomicBool::new(false)), opts, stats: ServerStats::default() })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    /// Flag that ends [`HilServer::serve`] within one poll interval once set.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    /// Frame loop. Returns when the stop flag is raised or the controller fails.
    pub fn serve(&mut self) -> Result<ServerStats> {
        let mut buf = [0u8; 64];
        while !self.stop.load(Ordering::Relaxed) {
            let (n, peer) = match self.socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if is_poll_timeout(&e) || e.kind() == ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(e.into()),
            };
            let Ok(tick) = TickFrame::decode(&buf[..n]) else {
                self.stats.malformed += 1;
                continue;
            };
            let vp = self.controller.adapt(&tick.observation())?;
            if !self.opts.latency.is_zero() {
                thread::sleep(self.opts.latency);
            }
            // The peer may have gone away; a failed reply is just a lost frame.
            let _ = self.socket.send_to(&ParamFrame::new(tick.seq, vp).encode(), peer);
            self.stats.answered += 1;
        }
        Ok(self.stats)
    }

    /// Runs the loop on a background thread.
    pub fn spawn(mut self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop_handle();
        let join = thread::spawn(move || self.serve());
        Ok(ServerHandle { addr, stop, join: Some(join) })
    }
}

fn is_poll_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Background server; stops and joins on drop.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<thread::JoinHandle<Result<ServerStats>>>,
}

impl ServerHandle {
    pub fn stop(mut self) -> Result<ServerStats> {
        self.finish()
    }

    fn finish(&mut self) -> Result<ServerStats> {
        self.stop.store(true, Ordering::Relaxed);
        match self.join.take() {
            Some(j) => j.join().unwrap_or_else(|_| Err(Error::Config("server thread panicked".into()))),
            None => Ok(ServerStats::default()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

/// Seeded drop of outgoing tick frames, for robustness tests.
#[derive(Debug, Clone)]
pub struct LossInjector {
    pub probability: f64,
    rng: ChaCha8Rng,
}

impl LossInjector {
    pub fn new(probability: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Config(format!("loss probability must be in [0, 1], got {probability}")));
        }
        Ok(Self { probability, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn drop_next(&mut self) -> bool {
        self.probability > 0.0 && self.rng.gen_bool(self.probability)
    }
}

/// Simulator-side proxy for a controller behind a HIL endpoint.
///
/// Each tick waits at most `timeout` for the matching reply; otherwise the
/// previous parameters are held and the frame is counted as lost.
pub struct RemoteController {
    socket: UdpSocket,
    timeout: Duration,
    seq: u32,
    last: Option<VirtualParams>,
    lost: u64,
    loss: Option<LossInjector>,
}

impl RemoteController {
    pub fn connect<A: ToSocketAddrs>(endpoint: A, timeout: Duration) -> Result<Self> {
        if timeout.is_zero() {
            return Err(Error::Config("HIL timeout must be > 0".into()));
        }
        let peer = endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Config("HIL endpoint did not resolve".into()))?;
        let local: SocketAddr = if peer.is_ipv4() { ([0, 0, 0, 0], 0).into() } else { (std::net::Ipv6Addr::UNSPECIFIED, 0).into() };
        let socket = UdpSocket::bind(local)?;
        socket.connect(peer)?;
        Ok(Self { socket, timeout, seq: 0, last: Some(VirtualParams::TABLE_IV), lost: 0, loss: None })
    }

    pub fn with_loss(mut self, loss: LossInjector) -> Self {
        self.loss = Some(loss);
        self
    }

    /// Parameters held until the first reply arrives.
    pub fn with_initial(mut self, last: Option<VirtualParams>) -> Self {
        self.last = last;
        self
    }

    pub fn set_timeout(&mut self, timeout: Duration) -> Result<()> {
        if timeout.is_zero() {
            return Err(Error::Config("HIL timeout must be > 0".into()));
        }
        self.timeout = timeout;
        Ok(())
    }

    pub fn last(&self) -> Option<VirtualParams> {
        self.last
    }

    fn exchange(&mut self, tick: &TickFrame) -> Result<Option<Option<VirtualParams>>> {
        match self.socket.send(&tick.encode()) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let deadline = Instant::now() + self.timeout;
        let mut buf = [0u8; 64];
        loop {
            let Some(left) = deadline.checked_duration_since(Instant::now()).filter(|d| !d.is_zero()) else {
                return Ok(None);
            };
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv(&mut buf) {
                Ok(n) => match ParamFrame::decode(&buf[..n]) {
                    Ok(reply) if reply.seq == tick.seq => match reply.params() {
                        Ok(vp) => return Ok(Some(vp)),
                        Err(_) => continue,
                    },
                    // Stale or malformed replies are discarded.
                    _ => continue,
                },
                Err(e) if is_poll_timeout(&e) => return Ok(None),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                    // Nothing is listening; waiting longer cannot help this tick.
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl VsgController for RemoteController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Remote
    }

    fn adapt(&mut self, obs: &Observation) -> Result<Option<VirtualParams>> {
        self.seq = self.seq.wrapping_add(1);
        let tick = TickFrame { seq: self.seq, t: obs.t, delta_f: obs.delta_f, rocof: obs.rocof, dp_res: obs.dp_res };
        let dropped = self.loss.as_mut().is_some_and(LossInjector::drop_next);
        let reply = if dropped { None } else { self.exchange(&tick)? };
        match reply {
            Some(vp) => self.last = vp,
            None => self.lost += 1,
        }
        Ok(self.last)
    }

    fn frames_lost(&self) -> u64 {
        self.lost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{build_local, ControllerSettings, FixedVsg};
    use proptest::prelude::*;

    #[test]
    fn frame_sizes_and_layout() {
        let t = TickFrame { seq: 7, t: 1.5, delta_f: -0.25, rocof: 0.0, dp_res: 0.1 };
        let b = t.encode();
        assert_eq!(b.len(), 40);
        assert_eq!(&b[..4], b"VSG1");
        assert_eq!(&b[4..8], &[7, 0, 0, 0]);
        assert_eq!(&b[8..16], &1.5f64.to_le_bytes());
        let p = ParamFrame::new(7, Some(VirtualParams::TABLE_IV)).encode();
        assert_eq!(p.len(), 32);
        assert_eq!(&p[24..32], &2.7f64.to_le_bytes());
    }

    #[test]
    fn malformed_frames_rejected() {
        let good = TickFrame { seq: 1, t: 0.0, delta_f: 0.0, rocof: 0.0, dp_res: 0.0 }.encode();
        assert!(TickFrame::decode(&good[..39]).is_err());
        let mut bad = good;
        bad[0] = b'X';
        assert!(TickFrame::decode(&bad).is_err());
        assert!(ParamFrame::decode(&good).is_err());
    }

    #[test]
    fn reply_params_reclamped_and_disabled() {
        let f = ParamFrame { seq: 1, k_v: 100.0, d_v: 0.0, r_v: 1.0 };
        assert_eq!(f.params().unwrap(), Some(VirtualParams::new(7.0, 0.1, 1.0)));
        assert_eq!(ParamFrame::new(2, None).params().unwrap(), None);
        assert!(ParamFrame { seq: 1, k_v: f64::NAN, d_v: 1.0, r_v: 1.0 }.params().is_err());
    }

    #[test]
    fn neutral_fnnc_server_replies_midpoint() {
        let settings = ControllerSettings { dt: 0.01, ..Default::default() };
        let server = HilServer::bind("127.0.0.1:0", build_local(ControllerKind::Fnnc, &settings).unwrap(), ServeOptions::default())
            .unwrap()
            .spawn()
            .unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        client.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let tick = TickFrame { seq: 7, t: 0.0, delta_f: 0.0, rocof: 0.0, dp_res: 0.0 };
        client.send_to(&tick.encode(), server.addr).unwrap();
        let mut buf = [0u8; 64];
        let n = client.recv(&mut buf).unwrap();
        let reply = ParamFrame::decode(&buf[..n]).unwrap();
        assert_eq!(reply.seq, 7);
        let mid = VirtualParams::midpoint();
        assert_eq!((reply.k_v, reply.d_v, reply.r_v), (mid.k_v, mid.d_v, mid.r_v));

        // Out-of-order and garbage frames.
        client.send_to(b"junk", server.addr).unwrap();
        client.send_to(&TickFrame { seq: 3, ..tick }.encode(), server.addr).unwrap();
        let n = client.recv(&mut buf).unwrap();
        assert_eq!(ParamFrame::decode(&buf[..n]).unwrap().seq, 3);
        let stats = server.stop().unwrap();
        assert_eq!(stats, ServerStats { answered: 2, malformed: 1 });
    }

    #[test]
    fn server_down_holds_last() {
        // Grab a free port, then close it so nothing is listening.
        let port = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let mut remote = RemoteController::connect(port, Duration::from_millis(20)).unwrap();
        let started = Instant::now();
        for k in 0..10 {
            let vp = remote.adapt(&Observation { t: k as f64 * 0.01, ..Default::default() }).unwrap();
            assert_eq!(vp, Some(VirtualParams::TABLE_IV));
        }
        assert_eq!(remote.frames_lost(), 10);
        assert!(started.elapsed() < Duration::from_millis(10 * 20 + 500));
    }

    #[test]
    fn stale_replies_discarded() {
        let server = HilServer::bind(
            "127.0.0.1:0",
            Box::new(FixedVsg::default()),
            ServeOptions { latency: Duration::from_millis(60) },
        )
        .unwrap()
        .spawn()
        .unwrap();
        let mut remote = RemoteController::connect(server.addr, Duration::from_millis(20))
            .unwrap()
            .with_initial(Some(VirtualParams::midpoint()));
        // First reply arrives too late and is left in the socket buffer.
        assert_eq!(remote.adapt(&Observation::default()).unwrap(), Some(VirtualParams::midpoint()));
        assert_eq!(remote.frames_lost(), 1);
        thread::sleep(Duration::from_millis(150));
        remote.set_timeout(Duration::from_millis(1000)).unwrap();
        assert_eq!(remote.adapt(&Observation::default()).unwrap(), Some(VirtualParams::TABLE_IV));
        assert_eq!(remote.frames_lost(), 1);
        assert_eq!(server.stop().unwrap().answered, 2);
    }

    #[test]
    fn loss_probability_validated() {
        assert!(LossInjector::new(1.5, 0).is_err());
        assert!(LossInjector::new(-0.1, 0).is_err());
        let mut l = LossInjector::new(1.0, 3).unwrap();
        assert!(l.drop_next());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn tick_round_trip(seq: u32, t: f64, d: f64, r: f64, p: f64) {
            let f = TickFrame { seq, t, delta_f: d, rocof: r, dp_res: p };
            let back = TickFrame::decode(&f.encode()).unwrap();
            prop_assert_eq!(back.encode(), f.encode());
        }

        #[test]
        fn param_round_trip(seq: u32, k: f64, d: f64, r: f64) {
            let f = ParamFrame { seq, k_v: k, d_v: d, r_v: r };
            let back = ParamFrame::decode(&f.encode()).unwrap();
            prop_assert_eq!(back.encode(), f.encode());
        }
    }
}
