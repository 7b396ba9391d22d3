//! Minimal framed-TCP client with a local replica.

use std::collections::BTreeSet;
use std::io;
use std::time::Duration;

use holoproxy_core::protocol::{decode, encode, Capability, ClientId, Envelope, MessagePayload, Role, SessionId};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};

use crate::replica::{Observed, Replica};

pub struct Client {
    session: SessionId,
    id: ClientId,
    next_seq: u64,
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    replica: Replica,
}

fn invalid(detail: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, detail.into())
}

impl Client {
    /// Connects and sends `Hello`. Call [`Client::await_snapshot`] to wait for the join.
    pub async fn connect(
        addr: impl ToSocketAddrs,
        session: SessionId,
        id: ClientId,
        role: Role,
        capabilities: BTreeSet<Capability>,
    ) -> io::Result<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read, writer) = stream.into_split();
        let mut client =
            Self { session, id, next_seq: 1, reader: BufReader::new(read), writer, replica: Replica::new() };
        client.send(MessagePayload::Hello { role, capabilities }).await?;
        Ok(client)
    }

    pub fn id(&self) -> &ClientId {
        &self.id
    }

    pub fn replica(&self) -> &Replica {
        &self.replica
    }

    /// Sends a payload under the next seq; returns that seq.
    pub async fn send(&mut self, payload: MessagePayload) -> io::Result<u64> {
        let seq = self.next_seq;
        let env = Envelope::new(self.session.clone(), self.id.clone(), seq, payload);
        self.send_raw(&encode(&env)).await?;
        self.next_seq += 1;
        Ok(seq)
    }

    /// Writes bytes as they are, bypassing sequencing.
    pub async fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes).await
    }

    /// Next hub envelope, already applied to the replica. `None` once the hub closed.
    pub async fn recv(&mut self) -> io::Result<Option<(Envelope, Observed)>> {
        let mut line = Vec::new();
        if self.reader.read_until(b'\n', &mut line).await? == 0 {
            return Ok(None);
        }
        let env = decode(&line).map_err(|e| invalid(e.to_string()))?;
        let observed = self.replica.observe(&env);
        if let (Observed::Snapshot, Some(state)) = (&observed, self.replica.state()) {
            // resume above anything the hub already holds for this id
            self.next_seq = self.next_seq.max(state.watermark(&self.id) + 1);
        }
        Ok(Some((env, observed)))
    }

    /// Receives until `pred` accepts an observation, collecting everything seen on the way.
    pub async fn recv_until(
        &mut self,
        timeout: Duration,
        mut pred: impl FnMut(&Envelope, &Observed) -> bool,
    ) -> io::Result<Vec<(Envelope, Observed)>> {
        let mut seen = Vec::new();
        tokio::time::timeout(timeout, async {
            loop {
                let Some((env, obs)) = self.recv().await? else {
                    return Err(io::Error::from(io::ErrorKind::UnexpectedEof));
                };
                let done = pred(&env, &obs);
                seen.push((env, obs));
                if done {
                    return Ok(());
                }
            }
        })
        .await
        .map_err(|_| io::Error::from(io::ErrorKind::TimedOut))??;
        Ok(seen)
    }

    pub async fn await_snapshot(&mut self, timeout: Duration) -> io::Result<()> {
        let seen = self.recv_until(timeout, |_, o| matches!(o, Observed::Snapshot | Observed::Error { .. })).await?;
        match seen.last() {
            Some((_, Observed::Error { code, detail, .. })) => Err(invalid(format!("{code:?}: {detail}"))),
            _ => Ok(()),
        }
    }

    /// Waits for the `Ack` or `Error` answering `seq`.
    pub async fn await_reply(&mut self, seq: u64, timeout: Duration) -> io::Result<Vec<(Envelope, Observed)>> {
        self.recv_until(timeout, |_, o| match o {
            Observed::Ack(s) => *s == seq,
            Observed::Error { seq: s, .. } => *s == seq,
            _ => false,
        })
        .await
    }

    pub async fn close(mut self) -> io::Result<()> {
        self.writer.shutdown().await
    }
}
